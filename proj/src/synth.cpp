#include "x2x/synth.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <set>

#include <nlohmann/json.hpp>

#include "x2x/jsonl.hpp"
#include "x2x/rng.hpp"

namespace x2x {

std::string strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::direct: return "direct";
    case Strategy::pivot: return "pivot";
    case Strategy::eaxt: return "eaxt";
  }
  throw Error("unknown strategy");
}

Strategy parse_strategy(std::string_view name) {
  if (name == "direct") return Strategy::direct;
  if (name == "pivot") return Strategy::pivot;
  if (name == "eaxt") return Strategy::eaxt;
  throw Error("unknown strategy '" + std::string(name) + "'");
}

PlanResult plan_expansion(const Corpus& corpus, const std::vector<LanguageTag>& langs,
                          Strategy strategy) {
  std::vector<LanguageTag> targets;
  for (const auto& lang : langs)
    if (!lang.is_english()) targets.push_back(lang);
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  PlanResult result;
  for (const auto& example : corpus.examples()) {
    if (strategy == Strategy::eaxt && example.english_text.empty()) {
      result.rejected.push_back(
          {example.id, LanguageTag{}, "eaxt requires english_text"});
      continue;
    }
    for (const auto& tgt : targets) {
      if (tgt == example.source_lang) continue;
      result.tasks.push_back(SynthTask{example.id, example.source_lang, tgt, strategy});
    }
  }
  return result;
}

std::uint64_t task_seed(std::uint64_t run_seed, const SynthTask& task) {
  return mix_seed(run_seed,
                  {fnv1a64(task.example_id), fnv1a64(task.src.code),
                   fnv1a64(task.tgt.code), fnv1a64(strategy_name(task.strategy))});
}

std::filesystem::path candidate_ledger_path(const std::filesystem::path& run_dir,
                                            Strategy strategy,
                                            const Direction& direction) {
  return run_dir / "candidates" / strategy_name(strategy) / (direction.label() + ".jsonl");
}

namespace {

Json candidate_to_json(const Candidate& candidate) {
  Json record{{"example_id", candidate.task.example_id},
              {"src", candidate.task.src.code},
              {"tgt", candidate.task.tgt.code},
              {"strategy", strategy_name(candidate.task.strategy)},
              {"sample_index", candidate.sample_index},
              {"text", candidate.text},
              {"degenerate", candidate.degenerate},
              {"template", candidate.template_name},
              {"params",
               {{"temperature", candidate.params.temperature},
                {"top_p", candidate.params.top_p},
                {"n", candidate.params.num_samples}}},
              {"backend", candidate.backend_id}};
  if (candidate.pivot_intermediate)
    record["pivot_intermediate"] = *candidate.pivot_intermediate;
  return record;
}

Candidate candidate_from_json(const Json& record) {
  Candidate candidate;
  candidate.task.example_id = record.at("example_id").get<std::string>();
  candidate.task.src = LanguageTag::parse(record.at("src").get<std::string>());
  candidate.task.tgt = LanguageTag::parse(record.at("tgt").get<std::string>());
  candidate.task.strategy = parse_strategy(record.at("strategy").get<std::string>());
  candidate.sample_index = record.at("sample_index").get<int>();
  candidate.text = record.at("text").get<std::string>();
  candidate.degenerate = record.at("degenerate").get<bool>();
  candidate.template_name = record.at("template").get<std::string>();
  const auto& params = record.at("params");
  candidate.params.temperature = params.at("temperature").get<double>();
  candidate.params.top_p = params.at("top_p").get<double>();
  candidate.params.num_samples = params.at("n").get<int>();
  candidate.backend_id = record.at("backend").get<std::string>();
  if (record.contains("pivot_intermediate"))
    candidate.pivot_intermediate = record["pivot_intermediate"].get<std::string>();
  return candidate;
}

// Loads a ledger, keeping only task groups with a full sample set; a partial
// group (interrupted run) is dropped and the file rewritten without it so the
// appender never duplicates sample indices.
std::set<std::string> load_completed_tasks(const std::filesystem::path& path,
                                           int num_samples) {
  std::set<std::string> completed;
  if (!std::filesystem::exists(path)) return completed;

  std::vector<Json> records;
  std::map<std::string, std::set<int>> samples_seen;
  for_each_jsonl(
      path,
      [&](Json&& record, std::size_t) {
        samples_seen[record.at("example_id").get<std::string>()].insert(
            record.at("sample_index").get<int>());
        records.push_back(std::move(record));
      },
      /*tolerate_trailing_garbage=*/true);

  for (const auto& [example_id, indices] : samples_seen) {
    if (static_cast<int>(indices.size()) == num_samples && *indices.begin() == 0 &&
        *indices.rbegin() == num_samples - 1)
      completed.insert(example_id);
  }
  if (completed.size() == samples_seen.size()) return completed;

  std::vector<Json> kept;
  kept.reserve(records.size());
  for (auto& record : records)
    if (completed.count(record.at("example_id").get<std::string>()))
      kept.push_back(std::move(record));
  atomic_write_jsonl(path, kept);
  return completed;
}

struct PreparedPrompt {
  std::size_t task_index;
  RenderedPrompt prompt;
  std::uint64_t seed;
  std::string template_name;
  std::optional<std::string> pivot_intermediate;
};

}  // namespace

SynthSummary synthesize(const Corpus& corpus, const PlanResult& plan, Strategy strategy,
                        Backend& backend, const TemplateRegistry& registry,
                        const SynthOptions& options) {
  if (options.run_dir.empty()) throw Error("synthesize: run_dir required");
  options.params.validate();
  if (options.batch_size == 0) throw Error("synthesize: batch_size must be >= 1");
  const LanguageTag english{"en"};

  SynthSummary summary;
  summary.planned = plan.tasks.size();

  // Resume pass: per direction, collect tasks already completed.
  std::map<std::string, std::set<std::string>> completed_by_direction;
  std::set<std::string> directions_seen;
  for (const auto& task : plan.tasks) {
    if (task.strategy != strategy)
      throw Error("plan strategy does not match synthesize strategy");
    const Direction direction{task.src, task.tgt};
    if (directions_seen.insert(direction.label()).second) {
      completed_by_direction[direction.label()] = load_completed_tasks(
          candidate_ledger_path(options.run_dir, strategy, direction),
          options.params.num_samples);
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < plan.tasks.size(); ++i) {
    const auto& task = plan.tasks[i];
    if (completed_by_direction[Direction{task.src, task.tgt}.label()].count(
            task.example_id)) {
      ++summary.resumed;
      ++summary.completed;
      summary.candidates += static_cast<std::size_t>(options.params.num_samples);
    } else {
      todo.push_back(i);
    }
  }

  std::map<std::string, std::unique_ptr<LedgerWriter>> writers;
  auto writer_for = [&](const Direction& direction) -> LedgerWriter& {
    auto& slot = writers[direction.label()];
    if (!slot)
      slot = std::make_unique<LedgerWriter>(
          candidate_ledger_path(options.run_dir, strategy, direction));
    return *slot;
  };
  LedgerWriter failures(options.run_dir / "failures" /
                        (strategy_name(strategy) + ".jsonl"));

  const bool pivot_two_stage = strategy == Strategy::pivot && options.two_stage_pivot;
  SamplingParams single = options.params;
  single.num_samples = 1;

  for (std::size_t start = 0; start < todo.size(); start += options.batch_size) {
    const std::size_t end = std::min(todo.size(), start + options.batch_size);
    std::vector<PreparedPrompt> prepared;
    prepared.reserve(end - start);
    std::vector<Json> failure_records;

    auto record_failure = [&](const SynthTask& task, const std::string& reason,
                              int attempts) {
      ++summary.failed;
      failure_records.push_back(Json{{"example_id", task.example_id},
                                     {"src", task.src.code},
                                     {"tgt", task.tgt.code},
                                     {"strategy", strategy_name(task.strategy)},
                                     {"reason", reason},
                                     {"attempts", attempts}});
    };

    // Optional x->en leg; its output replaces the English reference below.
    std::map<std::size_t, std::string> english_by_task;
    if (pivot_two_stage) {
      std::vector<std::size_t> leg_tasks;
      std::vector<RenderedPrompt> leg_prompts;
      std::vector<std::uint64_t> leg_seeds;
      for (std::size_t j = start; j < end; ++j) {
        const auto& task = plan.tasks[todo[j]];
        const auto& example = corpus.by_id(task.example_id);
        const auto& tpl = registry.pick(
            TemplateKind::direct, options.seed,
            "pivot-x2en|" + task.example_id + "|" + task.src.code);
        leg_tasks.push_back(todo[j]);
        leg_prompts.push_back(
            render_direct(tpl, task.src, english, example.source_text));
        leg_seeds.push_back(mix_seed(task_seed(options.seed, task), {fnv1a64("x2en")}));
      }
      const auto leg_results = backend.generate_batch(leg_prompts, single, leg_seeds);
      for (std::size_t k = 0; k < leg_results.size(); ++k) {
        const auto& result = leg_results[k];
        if (result.ok())
          english_by_task[leg_tasks[k]] = normalize_whitespace(result.samples.front());
        else
          record_failure(plan.tasks[leg_tasks[k]], "x2en leg: " + result.error->reason,
                         result.attempts);
      }
    }

    for (std::size_t j = start; j < end; ++j) {
      const std::size_t task_index = todo[j];
      const auto& task = plan.tasks[task_index];
      const auto& example = corpus.by_id(task.example_id);
      const std::string key = strategy_name(strategy) + "|" + task.example_id + "|" +
                              Direction{task.src, task.tgt}.label();
      PreparedPrompt prep;
      prep.task_index = task_index;
      prep.seed = task_seed(options.seed, task);
      switch (strategy) {
        case Strategy::direct: {
          const auto& tpl = registry.pick(TemplateKind::direct, options.seed, key);
          prep.template_name = tpl.name();
          prep.prompt = render_direct(tpl, task.src, task.tgt, example.source_text);
          break;
        }
        case Strategy::pivot: {
          std::string english_text = example.english_text;
          if (pivot_two_stage) {
            auto it = english_by_task.find(task_index);
            if (it == english_by_task.end()) continue;  // leg 1 failed, recorded
            english_text = it->second;
          }
          if (english_text.empty()) {
            record_failure(task, "pivot requires english text", 0);
            continue;
          }
          const auto& tpl = registry.pick(TemplateKind::direct, options.seed, key);
          prep.template_name = tpl.name();
          prep.prompt = render_direct(tpl, english, task.tgt, english_text);
          prep.pivot_intermediate = english_text;
          break;
        }
        case Strategy::eaxt: {
          const auto& tpl = registry.pick(TemplateKind::eaxt, options.seed, key);
          prep.template_name = tpl.name();
          prep.prompt = render_eaxt(tpl, task.src, task.tgt, example.source_text,
                                    example.english_text);
          break;
        }
      }
      prepared.push_back(std::move(prep));
    }

    if (!prepared.empty()) {
      std::vector<RenderedPrompt> prompts;
      std::vector<std::uint64_t> seeds;
      prompts.reserve(prepared.size());
      seeds.reserve(prepared.size());
      for (const auto& prep : prepared) {
        prompts.push_back(prep.prompt);
        seeds.push_back(prep.seed);
      }
      const auto results = backend.generate_batch(prompts, options.params, seeds);

      std::map<std::string, std::vector<Json>> appends;
      for (std::size_t k = 0; k < results.size(); ++k) {
        const auto& result = results[k];
        const auto& prep = prepared[k];
        const auto& task = plan.tasks[prep.task_index];
        if (!result.ok()) {
          record_failure(task, result.error->reason, result.attempts);
          continue;
        }
        const auto& example = corpus.by_id(task.example_id);
        std::vector<Json> lines;
        lines.reserve(result.samples.size());
        for (std::size_t i = 0; i < result.samples.size(); ++i) {
          Candidate candidate;
          candidate.task = task;
          candidate.sample_index = static_cast<int>(i);
          candidate.text = normalize_whitespace(result.samples[i]);
          candidate.degenerate =
              candidate.text.empty() || candidate.text == example.source_text;
          candidate.pivot_intermediate = prep.pivot_intermediate;
          candidate.template_name = prep.template_name;
          candidate.params = options.params;
          candidate.backend_id = backend.id();
          lines.push_back(candidate_to_json(candidate));
        }
        auto& bucket = appends[Direction{task.src, task.tgt}.label()];
        bucket.insert(bucket.end(), std::make_move_iterator(lines.begin()),
                      std::make_move_iterator(lines.end()));
        ++summary.completed;
        summary.candidates += result.samples.size();
      }
      for (auto& [label, records] : appends) {
        auto dash = label.find('-');
        writer_for(Direction{LanguageTag{label.substr(0, dash)},
                             LanguageTag{label.substr(dash + 1)}})
            .append(records);
      }
    }
    if (!failure_records.empty()) failures.append(failure_records);
  }
  return summary;
}

namespace {

std::vector<Candidate> read_ledger(const std::filesystem::path& path) {
  std::vector<Candidate> out;
  if (!std::filesystem::exists(path)) return out;
  for_each_jsonl(
      path,
      [&](Json&& record, std::size_t) { out.push_back(candidate_from_json(record)); },
      /*tolerate_trailing_garbage=*/true);
  return out;
}

void sort_candidates(std::vector<Candidate>& candidates) {
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.task.src.code, a.task.tgt.code, a.task.example_id, a.sample_index) <
           std::tie(b.task.src.code, b.task.tgt.code, b.task.example_id, b.sample_index);
  });
}

}  // namespace

std::vector<Candidate> read_candidates(const std::filesystem::path& run_dir,
                                       Strategy strategy) {
  std::vector<Candidate> out;
  const auto dir = run_dir / "candidates" / strategy_name(strategy);
  if (!std::filesystem::exists(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    auto part = read_ledger(file);
    out.insert(out.end(), std::make_move_iterator(part.begin()),
               std::make_move_iterator(part.end()));
  }
  sort_candidates(out);
  return out;
}

std::vector<Candidate> read_candidates(const std::filesystem::path& run_dir,
                                       Strategy strategy, const Direction& direction) {
  auto out = read_ledger(candidate_ledger_path(run_dir, strategy, direction));
  sort_candidates(out);
  return out;
}

}  // namespace x2x
