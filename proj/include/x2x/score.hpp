#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "x2x/backend.hpp"
#include "x2x/corpus.hpp"
#include "x2x/synth.hpp"

namespace x2x {

// What the reference side of a request carries:
//   proxy_en:         the English reference (x2x scored as if en2x)
//   direct_rm:        the original source text
//   reference_metric: the annotated translation in the candidate's own target
//                     language (so only en->x candidates qualify)
//   llm_judge:        reference-free; the source text rides along for the
//                     judge prompt
enum class ScoreMode { proxy_en, direct_rm, reference_metric, llm_judge };

std::string score_mode_name(ScoreMode mode);
ScoreMode parse_score_mode(std::string_view name);

struct ScoreScale {
  double lo = 0.0;
  double hi = 100.0;

  bool contains(double value) const { return value >= lo && value <= hi; }
};

struct ScoreRequest {
  std::string id;
  std::string reference_text;
  std::string candidate_text;
  LanguageTag tgt_lang;
};

struct ScoreOutcome {
  std::optional<double> score;
  bool out_of_range = false;
  std::string error;  // empty = none; set whenever score is absent
};

// Maps (reference, candidate, target language) to a scalar. Scores are kept
// in the scorer's native units; margins and thresholds downstream are in the
// same units, so scale() is reported alongside every stored score.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  virtual ScoreScale scale() const = 0;
  virtual std::vector<ScoreOutcome> score_batch(
      const std::vector<ScoreRequest>& requests) = 0;
};

// Character n-gram F-score, n=1..4, uniform weights, over code points of the
// whitespace-normalized strings, scaled to 0..100. Deterministic and
// dependency-free; stands in for external neural metrics.
double char_ngram_f_score(const std::string& reference, const std::string& candidate);

class SurrogateMetricScorer : public Scorer {
 public:
  std::string id() const override { return "surrogate:chrf4"; }
  ScoreScale scale() const override { return {0.0, 100.0}; }
  std::vector<ScoreOutcome> score_batch(
      const std::vector<ScoreRequest>& requests) override;
};

// Reads the quality scalar the mock backend embeds in its outputs. Candidates
// from real backends carry no marker and come back unscored.
class MarkerScorer : public Scorer {
 public:
  std::string id() const override { return "mock:marker"; }
  ScoreScale scale() const override { return {0.0, 100.0}; }
  std::vector<ScoreOutcome> score_batch(
      const std::vector<ScoreRequest>& requests) override;
};

// Chat-backend judge: renders a 0-100 scoring prompt per request, parses the
// first in-range number from the reply, retries unparsable replies once.
class LlmJudgeScorer : public Scorer {
 public:
  LlmJudgeScorer(Backend& backend, const TemplateRegistry& registry,
                 std::uint64_t seed);

  std::string id() const override { return "judge:" + backend_.id(); }
  ScoreScale scale() const override { return {0.0, 100.0}; }
  std::vector<ScoreOutcome> score_batch(
      const std::vector<ScoreRequest>& requests) override;

 private:
  Backend& backend_;
  const TemplateRegistry& registry_;
  std::uint64_t seed_;
};

struct ScorerEndpoint {
  std::string endpoint;   // http scorer
  std::string command;    // subprocess scorer
  std::string auth_env;
  int timeout_ms = 30000;
  int max_in_flight = 4;
  RetryPolicy retry;
  ScoreScale scale{0.0, 100.0};
};

// POST {"id","reference","candidate","lang"} -> {"id","score"}.
std::unique_ptr<Scorer> make_http_scorer(const ScorerEndpoint& endpoint);
// Same line schema over the stdin/stdout line protocol.
std::unique_ptr<Scorer> make_subprocess_scorer(const ScorerEndpoint& endpoint);

// Decorator recording every request for wiring assertions.
class CapturingScorer : public Scorer {
 public:
  explicit CapturingScorer(Scorer& inner) : inner_(inner) {}

  std::string id() const override { return inner_.id(); }
  ScoreScale scale() const override { return inner_.scale(); }
  std::vector<ScoreOutcome> score_batch(
      const std::vector<ScoreRequest>& requests) override;

  std::vector<ScoreRequest> captured() const;
  void clear_captured();

 private:
  Scorer& inner_;
  mutable std::mutex mutex_;
  std::vector<ScoreRequest> captured_;
};

struct ScoredCandidate {
  Candidate candidate;
  std::optional<double> score;
  std::string scorer_id;
  ScoreMode mode = ScoreMode::proxy_en;
  ScoreScale scale;
  bool out_of_range = false;
  std::string error;
};

// Builds one request per candidate with the mode's reference choice, scores
// them in candidate order. Candidates that cannot form a valid request (empty
// text, missing reference, wrong direction for reference_metric) come back
// unscored with a reason instead of aborting the batch.
std::vector<ScoredCandidate> score_candidates(const Corpus& corpus,
                                              const std::vector<Candidate>& candidates,
                                              Scorer& scorer, ScoreMode mode);

}  // namespace x2x
