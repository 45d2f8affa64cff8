#include "x2x/prefs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "x2x/jsonl.hpp"
#include "x2x/rng.hpp"

namespace x2x {

std::optional<PreferencePair> select_pair(const std::vector<ScoredCandidate>& scored) {
  if (scored.empty()) throw Error("select_pair: empty candidate list");
  for (const auto& entry : scored)
    if (entry.scorer_id != scored.front().scorer_id)
      throw Error("select_pair: mixed scorers in one list");

  const ScoredCandidate* chosen = nullptr;
  for (const auto& entry : scored) {
    if (!entry.score || entry.candidate.degenerate) continue;
    if (!chosen || *entry.score > *chosen->score ||
        (*entry.score == *chosen->score &&
         entry.candidate.sample_index < chosen->candidate.sample_index))
      chosen = &entry;
  }
  if (!chosen) return std::nullopt;

  const ScoredCandidate* rejected = nullptr;
  for (const auto& entry : scored) {
    if (!entry.score || &entry == chosen) continue;
    if (*entry.score > *chosen->score) continue;  // keeps margin >= 0
    if (!rejected || *entry.score < *rejected->score ||
        (*entry.score == *rejected->score &&
         entry.candidate.sample_index < rejected->candidate.sample_index))
      rejected = &entry;
  }
  if (!rejected) return std::nullopt;
  if (chosen->candidate.text == rejected->candidate.text) return std::nullopt;

  PreferencePair pair;
  pair.example_id = chosen->candidate.task.example_id;
  pair.direction = Direction{chosen->candidate.task.src, chosen->candidate.task.tgt};
  pair.chosen_text = chosen->candidate.text;
  pair.chosen_score = *chosen->score;
  pair.chosen_sample_index = chosen->candidate.sample_index;
  pair.rejected_text = rejected->candidate.text;
  pair.rejected_score = *rejected->score;
  pair.rejected_sample_index = rejected->candidate.sample_index;
  pair.margin = pair.chosen_score - pair.rejected_score;
  pair.scorer_id = chosen->scorer_id;
  return pair;
}

void FilterPolicy::validate() const {
  if (min_margin.has_value() == target_retention.has_value())
    throw Error("filter policy needs exactly one of min_margin / target_retention");
  if (target_retention && (*target_retention < 0.0 || *target_retention > 1.0))
    throw Error("target_retention must be in [0, 1]");
}

FilterPolicy rm_filter_policy() {
  FilterPolicy policy;
  policy.min_margin = 20.0;
  policy.min_chosen_score = 70.0;
  return policy;
}

FilterPolicy x2x_filter_policy() {
  FilterPolicy policy;
  policy.target_retention = 0.2;
  return policy;
}

namespace {

// Margin cutoff for one group under a retention target: the k-th largest
// margin with k = round(retention * size); ties at the cutoff are kept.
double retention_cutoff(std::vector<double> margins, double retention) {
  const auto size = static_cast<double>(margins.size());
  auto k = static_cast<std::size_t>(std::floor(retention * size + 0.5));
  if (k == 0) return std::numeric_limits<double>::infinity();
  k = std::min(k, margins.size());
  std::sort(margins.begin(), margins.end(), std::greater<>());
  return margins[k - 1];
}

}  // namespace

FilterResult filter_pairs(const std::vector<PreferencePair>& pairs,
                          const FilterPolicy& policy) {
  policy.validate();

  std::map<std::string, double> cutoff_by_group;
  auto group_of = [&](const PreferencePair& pair) {
    return policy.per_direction ? pair.direction.label() : std::string("*");
  };
  if (policy.min_margin) {
    // Single fixed cutoff; groups are only used for stats.
  } else {
    std::map<std::string, std::vector<double>> margins;
    for (const auto& pair : pairs) margins[group_of(pair)].push_back(pair.margin);
    for (auto& [group, values] : margins)
      cutoff_by_group[group] = retention_cutoff(std::move(values), *policy.target_retention);
  }

  FilterResult result;
  for (const auto& pair : pairs) {
    const double cutoff =
        policy.min_margin ? *policy.min_margin : cutoff_by_group.at(group_of(pair));
    bool keep = pair.margin >= cutoff;
    if (keep && policy.min_chosen_score) keep = pair.chosen_score >= *policy.min_chosen_score;

    auto& direction = result.stats.per_direction[pair.direction.label()];
    ++direction.input;
    ++result.stats.input;
    if (keep) {
      ++direction.kept;
      ++result.stats.kept;
      result.kept.push_back(pair);
    } else {
      ++direction.dropped;
      ++result.stats.dropped;
      result.dropped.push_back(pair);
    }
  }
  return result;
}

PrefsBuildResult build_preferences_from_scored(const Corpus& corpus,
                                               std::vector<ScoredCandidate> scored,
                                               const FilterPolicy& policy,
                                               bool english_is_source) {
  PrefsBuildResult result;
  std::set<std::string> all_directions;
  for (const auto& entry : scored) {
    all_directions.insert(
        Direction{entry.candidate.task.src, entry.candidate.task.tgt}.label());
    if (!entry.score) ++result.unscored_candidates;
    if (entry.candidate.degenerate) ++result.degenerate_candidates;
  }

  std::sort(scored.begin(), scored.end(),
            [](const ScoredCandidate& a, const ScoredCandidate& b) {
              return std::tie(a.candidate.task.src.code, a.candidate.task.tgt.code,
                              a.candidate.task.example_id, a.candidate.sample_index) <
                     std::tie(b.candidate.task.src.code, b.candidate.task.tgt.code,
                              b.candidate.task.example_id, b.candidate.sample_index);
            });

  std::vector<PreferencePair> pairs;
  std::size_t begin = 0;
  while (begin < scored.size()) {
    std::size_t end = begin + 1;
    auto same_group = [&](const ScoredCandidate& a, const ScoredCandidate& b) {
      return a.candidate.task.example_id == b.candidate.task.example_id &&
             a.candidate.task.src == b.candidate.task.src &&
             a.candidate.task.tgt == b.candidate.task.tgt;
    };
    while (end < scored.size() && same_group(scored[begin], scored[end])) ++end;
    ++result.groups;

    std::vector<ScoredCandidate> group(scored.begin() + static_cast<std::ptrdiff_t>(begin),
                                       scored.begin() + static_cast<std::ptrdiff_t>(end));
    auto pair = select_pair(group);
    if (pair) {
      if (const ParallelExample* example = corpus.find(pair->example_id)) {
        pair->source_text = english_is_source ? example->english_text : example->source_text;
        pair->english_text = example->english_text;
        pairs.push_back(std::move(*pair));
      } else {
        ++result.groups_without_pair;
      }
    } else {
      ++result.groups_without_pair;
    }
    begin = end;
  }

  auto filtered = filter_pairs(pairs, policy);
  result.kept = std::move(filtered.kept);
  result.dropped = std::move(filtered.dropped);
  result.stats = std::move(filtered.stats);
  for (const auto& label : all_directions) {
    auto it = result.stats.per_direction.find(label);
    if (it == result.stats.per_direction.end() || it->second.kept == 0)
      result.zero_survivor_directions.push_back(label);
  }
  return result;
}

PrefsBuildResult build_x2x_preferences(const Corpus& corpus,
                                       const std::vector<Candidate>& candidates,
                                       Scorer& scorer, const PrefsOptions& options) {
  options.policy.validate();
  auto scored = score_candidates(corpus, candidates, scorer, options.mode);
  return build_preferences_from_scored(corpus, std::move(scored), options.policy,
                                       /*english_is_source=*/false);
}

PrefsBuildResult build_rm_dataset(const Corpus& corpus, Backend& backend,
                                  const TemplateRegistry& registry, Scorer& metric,
                                  const RmDataOptions& options) {
  options.policy.validate();
  options.params.validate();
  if (options.batch_size == 0) throw Error("build_rm_dataset: batch_size must be >= 1");
  const LanguageTag english{"en"};

  std::vector<const ParallelExample*> eligible;
  for (const auto& example : corpus.examples())
    if (!example.source_lang.is_english() && !example.english_text.empty())
      eligible.push_back(&example);

  std::size_t generation_failures = 0;
  std::vector<Candidate> candidates;
  for (std::size_t start = 0; start < eligible.size(); start += options.batch_size) {
    const std::size_t end = std::min(eligible.size(), start + options.batch_size);
    std::vector<RenderedPrompt> prompts;
    std::vector<std::uint64_t> seeds;
    std::vector<const PromptTemplate*> templates;
    for (std::size_t j = start; j < end; ++j) {
      const auto& example = *eligible[j];
      const auto& tpl =
          registry.pick(TemplateKind::direct, options.seed, "rm|" + example.id);
      templates.push_back(&tpl);
      prompts.push_back(
          render_direct(tpl, english, example.source_lang, example.english_text));
      seeds.push_back(mix_seed(options.seed, {fnv1a64("rm"), fnv1a64(example.id)}));
    }
    const auto results = backend.generate_batch(prompts, options.params, seeds);
    for (std::size_t k = 0; k < results.size(); ++k) {
      const auto& example = *eligible[start + k];
      if (!results[k].ok()) {
        ++generation_failures;
        continue;
      }
      for (std::size_t i = 0; i < results[k].samples.size(); ++i) {
        Candidate candidate;
        candidate.task = SynthTask{example.id, english, example.source_lang,
                                   Strategy::direct};
        candidate.sample_index = static_cast<int>(i);
        candidate.text = normalize_whitespace(results[k].samples[i]);
        candidate.degenerate =
            candidate.text.empty() || candidate.text == example.english_text;
        candidate.template_name = templates[k]->name();
        candidate.params = options.params;
        candidate.backend_id = backend.id();
        candidates.push_back(std::move(candidate));
      }
    }
  }

  auto scored = score_candidates(corpus, candidates, metric, ScoreMode::reference_metric);
  auto result = build_preferences_from_scored(corpus, std::move(scored), options.policy,
                                              /*english_is_source=*/true);
  result.generation_failures = generation_failures;
  return result;
}

void write_preferences(const std::vector<PreferencePair>& pairs,
                       const std::filesystem::path& path) {
  std::vector<Json> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs) {
    records.push_back(Json{{"example_id", pair.example_id},
                           {"src", pair.direction.src.code},
                           {"tgt", pair.direction.tgt.code},
                           {"source_text", pair.source_text},
                           {"english_text", pair.english_text},
                           {"chosen", pair.chosen_text},
                           {"rejected", pair.rejected_text},
                           {"chosen_score", pair.chosen_score},
                           {"rejected_score", pair.rejected_score},
                           {"margin", pair.margin},
                           {"scorer_id", pair.scorer_id}});
  }
  atomic_write_jsonl(path, records);
}

std::vector<PreferencePair> read_preferences(const std::filesystem::path& path) {
  std::vector<PreferencePair> pairs;
  for_each_jsonl(path, [&](Json&& record, std::size_t line_no) {
    try {
      PreferencePair pair;
      pair.example_id = record.at("example_id").get<std::string>();
      pair.direction = Direction{LanguageTag::parse(record.at("src").get<std::string>()),
                                 LanguageTag::parse(record.at("tgt").get<std::string>())};
      pair.source_text = record.at("source_text").get<std::string>();
      pair.english_text = record.at("english_text").get<std::string>();
      pair.chosen_text = record.at("chosen").get<std::string>();
      pair.rejected_text = record.at("rejected").get<std::string>();
      pair.chosen_score = record.at("chosen_score").get<double>();
      pair.rejected_score = record.at("rejected_score").get<double>();
      pair.margin = record.at("margin").get<double>();
      pair.scorer_id = record.at("scorer_id").get<std::string>();
      pairs.push_back(std::move(pair));
    } catch (const nlohmann::json::exception& e) {
      throw Error("preference record at line " + std::to_string(line_no) + ": " + e.what());
    }
  });
  return pairs;
}

}  // namespace x2x
