#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "x2x/pipeline.hpp"

namespace {

std::vector<x2x::Strategy> parse_strategies(const std::vector<std::string>& names) {
  std::vector<x2x::Strategy> strategies;
  strategies.reserve(names.size());
  for (const auto& name : names) strategies.push_back(x2x::parse_strategy(name));
  return strategies;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"x2x translation training-data pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("-c,--config", config_path, "pipeline config file (JSON)")->required();
  std::optional<std::uint64_t> seed_override;
  app.add_option("--seed", seed_override, "override the config seed");
  std::optional<std::string> run_dir_override;
  app.add_option("--run-dir", run_dir_override, "override the run directory");

  auto* ingest_cmd =
      app.add_subcommand("ingest", "validate and normalize the corpus into the run dir");

  std::vector<std::string> plan_strategies{"direct", "pivot", "eaxt"};
  auto* plan_cmd = app.add_subcommand("plan", "report task counts per strategy");
  plan_cmd->add_option("--strategy", plan_strategies, "strategies to plan")
      ->delimiter(',');

  std::string synth_strategy;
  auto* synth_cmd =
      app.add_subcommand("synthesize", "generate candidate translations (resumable)");
  synth_cmd->add_option("--strategy", synth_strategy, "direct | pivot | eaxt")
      ->required();

  std::string score_strategy;
  std::string score_mode = "proxy_en";
  auto* score_cmd =
      app.add_subcommand("score", "score a candidate store into a score ledger");
  score_cmd->add_option("--strategy", score_strategy, "direct | pivot | eaxt")
      ->required();
  score_cmd->add_option(
      "--mode", score_mode, "proxy_en | direct_rm | reference_metric | llm_judge");

  std::string prefs_strategy;
  std::string prefs_mode = "proxy_en";
  auto* prefs_cmd = app.add_subcommand(
      "build-prefs", "select + filter preference pairs from scored candidates");
  prefs_cmd->add_option("--strategy", prefs_strategy, "direct | pivot | eaxt")
      ->required();
  prefs_cmd->add_option(
      "--mode", prefs_mode, "proxy_en | direct_rm | reference_metric | llm_judge");

  auto* rm_cmd = app.add_subcommand(
      "build-rm-data", "build en->x preference pairs for reward-model training");

  std::string emit_format;
  std::string emit_strategy = "eaxt";
  auto* emit_cmd =
      app.add_subcommand("emit", "serialize preference data into a training format");
  emit_cmd->add_option("--format", emit_format, "dpo | sft-chosen | rm-pairs")
      ->required();
  emit_cmd->add_option("--strategy", emit_strategy,
                       "source preference store (ignored for rm-pairs)");

  std::vector<std::string> compare_strategies_opt{"direct", "pivot", "eaxt"};
  std::optional<std::string> compare_mode;
  bool compare_first_only = false;
  auto* compare_cmd =
      app.add_subcommand("compare", "score strategies under one judge and report");
  compare_cmd->add_option("--strategy", compare_strategies_opt, "strategies to compare")
      ->delimiter(',');
  compare_cmd->add_option("--mode", compare_mode, "judge mode override");
  compare_cmd->add_flag("--first-only", compare_first_only,
                        "score only the first sample of each task");

  auto* stats_cmd =
      app.add_subcommand("stats", "inventory of run-dir artifacts (read-only)");

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = x2x::PipelineConfig::load(config_path);
    if (seed_override) config.seed = *seed_override;
    if (run_dir_override) config.run_dir = *run_dir_override;
    if (compare_mode) config.compare_mode = x2x::parse_score_mode(*compare_mode);
    if (compare_first_only) config.first_only = true;

    if (*stats_cmd) return x2x::stage_stats(config);

    // Every mutating command holds the run-dir lock for its whole lifetime.
    x2x::RunLock lock(config.run_dir);
    if (*ingest_cmd) return x2x::stage_ingest(config);
    if (*plan_cmd) return x2x::stage_plan(config, parse_strategies(plan_strategies));
    if (*synth_cmd)
      return x2x::stage_synthesize(config, x2x::parse_strategy(synth_strategy));
    if (*score_cmd)
      return x2x::stage_score(config, x2x::parse_strategy(score_strategy),
                              x2x::parse_score_mode(score_mode));
    if (*prefs_cmd)
      return x2x::stage_build_prefs(config, x2x::parse_strategy(prefs_strategy),
                                    x2x::parse_score_mode(prefs_mode));
    if (*rm_cmd) return x2x::stage_build_rm(config);
    if (*emit_cmd)
      return x2x::stage_emit(config, x2x::parse_emit_format(emit_format),
                             x2x::parse_strategy(emit_strategy));
    if (*compare_cmd)
      return x2x::stage_compare(config, parse_strategies(compare_strategies_opt));
    std::cerr << "no command\n";
    return 1;
  } catch (const x2x::ConfigError& error) {
    std::cerr << error.what() << "\n";
    return 1;
  } catch (const x2x::EnvironmentError& error) {
    std::cerr << "environment error: " << error.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& error) {
    std::cerr << "environment error: " << error.what() << "\n";
    return 3;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 1;
  }
}
