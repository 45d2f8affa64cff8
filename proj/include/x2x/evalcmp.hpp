#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "x2x/jsonl.hpp"
#include "x2x/prefs.hpp"
#include "x2x/score.hpp"
#include "x2x/synth.hpp"

namespace x2x {

// Single-pass mean / spread accumulator (Welford); stddev is the sample
// standard deviation.
struct Aggregate {
  std::size_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double value);
  double stddev() const;
};

// Five-number summary with 1.5*IQR whiskers; quartiles use linear
// interpolation between order statistics.
struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::size_t outliers_low = 0;
  std::size_t outliers_high = 0;

  static BoxStats from_values(std::vector<double> values);
};

struct StrategyReport {
  std::string strategy;
  Aggregate overall;
  BoxStats box;
  std::map<std::string, Aggregate> per_direction;
  std::size_t scored = 0;
  std::size_t unscored = 0;
};

// Mean per-instance score difference between two strategies over the shared
// instance set, plus win/tie counts.
struct PairedComparison {
  std::string a;
  std::string b;
  std::size_t instances = 0;
  double mean_delta = 0.0;  // mean(score_a - score_b)
  std::size_t a_wins = 0;
  std::size_t ties = 0;
  std::size_t b_wins = 0;
};

struct CompareReport {
  std::vector<StrategyReport> strategies;
  std::vector<PairedComparison> paired;
  std::string scorer_id;
  bool first_only = false;

  Json to_json() const;
  std::string to_text() const;
  std::string to_csv() const;  // one row per (strategy, direction)
};

struct CompareOptions {
  ScoreMode mode = ScoreMode::llm_judge;
  // Score only sample_index 0 of each task instead of all n samples.
  bool first_only = false;
};

// Scores each strategy's candidate store under one judge and aggregates.
// Requires identical (example, direction) coverage across strategies; the
// error message lists the first differences.
CompareReport compare_strategies(
    const Corpus& corpus,
    const std::vector<std::pair<std::string, std::vector<Candidate>>>& stores,
    Scorer& scorer, const CompareOptions& options);

struct ModeAgreement {
  std::string mode_a;
  std::string mode_b;
  std::size_t common_groups = 0;
  double chosen_agreement = 0.0;    // same chosen sample_index
  double rejected_agreement = 0.0;
  std::size_t common_scored = 0;
  double score_correlation = 0.0;   // Pearson over jointly scored candidates
};

struct AblationReport {
  std::vector<ModeAgreement> agreements;
  std::map<std::string, std::size_t> unscored_per_mode;

  Json to_json() const;
  std::string to_text() const;
};

// Selection agreement across scoring modes over one candidate store.
AblationReport ablation_scoring_modes(
    const Corpus& corpus, const std::vector<Candidate>& candidates,
    const std::vector<std::pair<ScoreMode, Scorer*>>& scorers);

}  // namespace x2x
