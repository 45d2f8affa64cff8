#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "x2x/backend.hpp"
#include "x2x/corpus.hpp"
#include "x2x/emit.hpp"
#include "x2x/jsonl.hpp"
#include "x2x/prefs.hpp"
#include "x2x/prompts.hpp"
#include "x2x/score.hpp"
#include "x2x/synth.hpp"

namespace x2x {

// Config problems are reported all at once, one violation per entry.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

enum class ScorerKind { surrogate, marker, judge, http, subprocess };

std::string scorer_kind_name(ScorerKind kind);
std::optional<ScorerKind> parse_scorer_kind(const std::string& name);

struct ScorerConfig {
  ScorerKind kind = ScorerKind::surrogate;
  ScorerEndpoint endpoint;

  Json to_json() const;
};

struct CorpusConfig {
  std::filesystem::path path;
  CorpusFormat format = CorpusFormat::jsonl;
  // Required for TSV inputs, which carry no per-record language.
  std::optional<LanguageTag> source_lang;
  double max_reject_fraction = 0.01;
  // 0 disables the length cap (code points per text field).
  std::size_t max_length = 0;

  Json to_json() const;
};

// One file drives every command. Values here are the effective settings after
// env interpolation; the digest covers exactly what to_json() serializes, so
// flag overrides change the digest.
struct PipelineConfig {
  std::filesystem::path run_dir;
  std::uint64_t seed = 0;
  std::vector<LanguageTag> languages;
  CorpusConfig corpus;
  BackendDescriptor backend;
  ScorerConfig scorer;             // used by `score` / `build-prefs` / `compare`
  ScorerConfig metric;             // reference-based metric for `build-rm-data`
  SamplingParams x2x_params = x2x_sampling();
  SamplingParams rm_params = rm_sampling();
  FilterPolicy x2x_policy = x2x_filter_policy();
  FilterPolicy rm_policy = rm_filter_policy();
  bool two_stage_pivot = false;
  std::size_t batch_size = 64;
  double failure_tolerance = 0.05;
  std::vector<std::filesystem::path> template_files;
  ScoreMode compare_mode = ScoreMode::llm_judge;
  bool first_only = false;

  // Parse + interpolate ${VAR} + validate; throws ConfigError listing every
  // violation. Relative paths inside the file resolve against its directory.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(const Json& doc,
                                  const std::filesystem::path& base_dir);

  Json to_json() const;
  // fnv1a64 hex of the canonical serialization.
  std::string digest() const;
};

// Exclusive ownership of a run directory via a pid lock file. A lock whose
// recorded pid is no longer alive is taken over.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path lock_path_;
  bool held_ = false;
};

// Builtin templates plus any files listed in the config.
TemplateRegistry load_templates(const PipelineConfig& config);

// judge-kind scorers drive the configured backend; the others stand alone.
std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config, Backend& backend,
                                    const TemplateRegistry& registry,
                                    std::uint64_t seed);

// Paths of stage outputs inside the run directory.
std::filesystem::path working_corpus_path(const PipelineConfig& config);
std::filesystem::path rejects_path(const PipelineConfig& config);
std::filesystem::path scores_path(const PipelineConfig& config, Strategy strategy,
                                  ScoreMode mode);
std::filesystem::path prefs_path(const PipelineConfig& config, Strategy strategy);
std::filesystem::path prefs_stats_path(const PipelineConfig& config,
                                       Strategy strategy);
std::filesystem::path rm_prefs_path(const PipelineConfig& config);
std::filesystem::path rm_prefs_stats_path(const PipelineConfig& config);
std::filesystem::path dataset_path(const PipelineConfig& config, EmitFormat format,
                                   Strategy strategy);
std::filesystem::path compare_report_path(const PipelineConfig& config);

// Corpus previously written by stage_ingest; throws if ingest has not run.
Corpus load_working_corpus(const PipelineConfig& config);

// Each stage returns a process exit code: 0 success, 2 partial failure above
// the configured tolerance. Validation and environment problems throw.
int stage_ingest(const PipelineConfig& config);
int stage_plan(const PipelineConfig& config,
               const std::vector<Strategy>& strategies);
int stage_synthesize(const PipelineConfig& config, Strategy strategy);
int stage_score(const PipelineConfig& config, Strategy strategy, ScoreMode mode);
int stage_build_prefs(const PipelineConfig& config, Strategy strategy,
                      ScoreMode mode);
int stage_build_rm(const PipelineConfig& config);
int stage_emit(const PipelineConfig& config, EmitFormat format,
               Strategy strategy);
int stage_compare(const PipelineConfig& config,
                  const std::vector<Strategy>& strategies);
int stage_stats(const PipelineConfig& config);

}  // namespace x2x
