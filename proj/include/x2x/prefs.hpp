#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "x2x/corpus.hpp"
#include "x2x/score.hpp"
#include "x2x/synth.hpp"

namespace x2x {

// source_text is the text the model translated from (for en->x reward-model
// data that is the English side), english_text always the English reference.
struct PreferencePair {
  std::string example_id;
  Direction direction;
  std::string source_text;
  std::string english_text;
  std::string chosen_text;
  double chosen_score = 0.0;
  int chosen_sample_index = 0;
  std::string rejected_text;
  double rejected_score = 0.0;
  int rejected_sample_index = 0;
  double margin = 0.0;  // chosen_score - rejected_score, always >= 0
  std::string scorer_id;

  bool operator==(const PreferencePair&) const = default;
};

// Best/worst selection over one task group. Unscored entries are ignored;
// degenerate candidates may only land on the rejected side. Ties break toward
// the lowest sample_index. Returns nothing when no valid (chosen, rejected)
// pair with distinct texts and margin >= 0 exists.
std::optional<PreferencePair> select_pair(const std::vector<ScoredCandidate>& scored);

struct FilterPolicy {
  // Exactly one of min_margin / target_retention drives filtering.
  std::optional<double> min_margin;
  std::optional<double> target_retention;  // keep top fraction by margin, ties kept
  std::optional<double> min_chosen_score;
  // Quantile computed within each direction instead of globally.
  bool per_direction = false;

  void validate() const;
};

// Reward-model labeling thresholds: margin at least 20, chosen at least 70.
FilterPolicy rm_filter_policy();
// Default x2x policy: keep the top 20% of pairs by margin.
FilterPolicy x2x_filter_policy();

struct DirectionStats {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

struct FilterStats {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::map<std::string, DirectionStats> per_direction;

  double retention() const {
    return input == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(input);
  }
};

struct FilterResult {
  std::vector<PreferencePair> kept;
  std::vector<PreferencePair> dropped;
  FilterStats stats;
};

// Order-preserving partition of `pairs` under the policy; the kept set is
// independent of input order.
FilterResult filter_pairs(const std::vector<PreferencePair>& pairs,
                          const FilterPolicy& policy);

struct PrefsOptions {
  FilterPolicy policy = x2x_filter_policy();
  ScoreMode mode = ScoreMode::proxy_en;
};

struct PrefsBuildResult {
  std::vector<PreferencePair> kept;
  std::vector<PreferencePair> dropped;
  FilterStats stats;
  std::vector<std::string> zero_survivor_directions;
  std::size_t groups = 0;
  std::size_t groups_without_pair = 0;
  std::size_t unscored_candidates = 0;
  std::size_t degenerate_candidates = 0;
  std::size_t generation_failures = 0;  // rm builder only
};

// Scores every candidate under options.mode, selects one pair per
// (example, direction) group, filters. Group order is (src, tgt, example_id).
PrefsBuildResult build_x2x_preferences(const Corpus& corpus,
                                       const std::vector<Candidate>& candidates,
                                       Scorer& scorer, const PrefsOptions& options);

// Same selection + filtering over candidates that were already scored (for
// callers that persist score ledgers). english_is_source marks en->x data
// whose prompt side is the English text.
PrefsBuildResult build_preferences_from_scored(const Corpus& corpus,
                                               std::vector<ScoredCandidate> scored,
                                               const FilterPolicy& policy,
                                               bool english_is_source = false);

struct RmDataOptions {
  std::uint64_t seed = 0;
  SamplingParams params = rm_sampling();
  FilterPolicy policy = rm_filter_policy();
  std::size_t batch_size = 64;
};

// English -> source-language generation scored against the example's own
// annotated text, yielding (english source, chosen, rejected) tuples for
// reward-model training.
PrefsBuildResult build_rm_dataset(const Corpus& corpus, Backend& backend,
                                  const TemplateRegistry& registry, Scorer& metric,
                                  const RmDataOptions& options);

// Preference store serialization (one JSON object per pair, canonical form).
void write_preferences(const std::vector<PreferencePair>& pairs,
                       const std::filesystem::path& path);
std::vector<PreferencePair> read_preferences(const std::filesystem::path& path);

}  // namespace x2x
