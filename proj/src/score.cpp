#include "x2x/score.hpp"

#include <algorithm>
#include <map>

#include "x2x/rng.hpp"

namespace x2x {

std::string score_mode_name(ScoreMode mode) {
  switch (mode) {
    case ScoreMode::proxy_en: return "proxy_en";
    case ScoreMode::direct_rm: return "direct_rm";
    case ScoreMode::reference_metric: return "reference_metric";
    case ScoreMode::llm_judge: return "llm_judge";
  }
  throw Error("unknown score mode");
}

ScoreMode parse_score_mode(std::string_view name) {
  if (name == "proxy_en") return ScoreMode::proxy_en;
  if (name == "direct_rm") return ScoreMode::direct_rm;
  if (name == "reference_metric") return ScoreMode::reference_metric;
  if (name == "llm_judge") return ScoreMode::llm_judge;
  throw Error("unknown score mode '" + std::string(name) + "'");
}

namespace {

// Sorted code-point n-gram multiset as (gram, count) runs.
std::map<std::u32string, int> ngram_counts(const std::vector<char32_t>& points,
                                           std::size_t n) {
  std::map<std::u32string, int> counts;
  if (points.size() < n) return counts;
  for (std::size_t i = 0; i + n <= points.size(); ++i)
    ++counts[std::u32string(points.begin() + static_cast<std::ptrdiff_t>(i),
                            points.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

double char_ngram_f_score(const std::string& reference, const std::string& candidate) {
  const auto ref_points = decode_utf8(normalize_whitespace(reference));
  const auto cand_points = decode_utf8(normalize_whitespace(candidate));
  if (ref_points.empty() && cand_points.empty()) return 100.0;

  double sum = 0.0;
  int included = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto ref_grams = ngram_counts(ref_points, n);
    const auto cand_grams = ngram_counts(cand_points, n);
    long ref_total = 0, cand_total = 0;
    for (const auto& [gram, count] : ref_grams) ref_total += count;
    for (const auto& [gram, count] : cand_grams) cand_total += count;
    if (ref_total == 0 && cand_total == 0) continue;
    ++included;
    if (ref_total == 0 || cand_total == 0) continue;  // F contribution 0
    long overlap = 0;
    for (const auto& [gram, count] : ref_grams) {
      auto it = cand_grams.find(gram);
      if (it != cand_grams.end()) overlap += std::min(count, it->second);
    }
    const double precision = static_cast<double>(overlap) / static_cast<double>(cand_total);
    const double recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
    if (precision + recall > 0.0) sum += 2.0 * precision * recall / (precision + recall);
  }
  return included == 0 ? 0.0 : 100.0 * sum / included;
}

std::vector<ScoreOutcome> SurrogateMetricScorer::score_batch(
    const std::vector<ScoreRequest>& requests) {
  std::vector<ScoreOutcome> out(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i)
    out[i].score = char_ngram_f_score(requests[i].reference_text,
                                      requests[i].candidate_text);
  return out;
}

std::vector<ScoreOutcome> MarkerScorer::score_batch(
    const std::vector<ScoreRequest>& requests) {
  std::vector<ScoreOutcome> out(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (auto quality = MockBackend::extract_marker(requests[i].candidate_text))
      out[i].score = *quality * 100.0;
    else
      out[i].error = "no quality marker in candidate";
  }
  return out;
}

LlmJudgeScorer::LlmJudgeScorer(Backend& backend, const TemplateRegistry& registry,
                               std::uint64_t seed)
    : backend_(backend), registry_(registry), seed_(seed) {}

std::vector<ScoreOutcome> LlmJudgeScorer::score_batch(
    const std::vector<ScoreRequest>& requests) {
  std::vector<ScoreOutcome> out(requests.size());
  SamplingParams params;
  params.temperature = 0.0;
  params.top_p = 1.0;
  params.num_samples = 1;

  std::vector<std::size_t> pending(requests.size());
  for (std::size_t i = 0; i < pending.size(); ++i) pending[i] = i;

  // Round 2 regenerates unparsable replies with a shifted seed.
  for (int round = 0; round < 2 && !pending.empty(); ++round) {
    std::vector<RenderedPrompt> prompts;
    std::vector<std::uint64_t> seeds;
    prompts.reserve(pending.size());
    seeds.reserve(pending.size());
    for (std::size_t index : pending) {
      const auto& request = requests[index];
      const auto& tpl = registry_.pick(TemplateKind::judge, seed_, request.id);
      prompts.push_back(render_judge(tpl, request.reference_text, request.tgt_lang,
                                     request.candidate_text));
      seeds.push_back(mix_seed(seed_, {fnv1a64(request.id),
                                       static_cast<std::uint64_t>(round)}));
    }
    const auto results = backend_.generate_batch(prompts, params, seeds);

    std::vector<std::size_t> retry;
    for (std::size_t k = 0; k < results.size(); ++k) {
      const std::size_t index = pending[k];
      if (!results[k].ok()) {
        out[index].error = results[k].error->reason;
        continue;  // transport retries already happened inside the backend
      }
      const std::string& reply = results[k].samples.front();
      double value = 0.0;
      if (parse_first_number_in_range(reply, 0.0, 100.0, value)) {
        out[index].score = value;
        out[index].error.clear();
      } else {
        out[index].error = "unparsable judge reply: " + reply.substr(0, 80);
        double any = 0.0;
        if (parse_first_number_in_range(reply, -1e18, 1e18, any))
          out[index].out_of_range = true;
        retry.push_back(index);
      }
    }
    pending = std::move(retry);
  }
  return out;
}

std::vector<ScoreOutcome> CapturingScorer::score_batch(
    const std::vector<ScoreRequest>& requests) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    captured_.insert(captured_.end(), requests.begin(), requests.end());
  }
  return inner_.score_batch(requests);
}

std::vector<ScoreRequest> CapturingScorer::captured() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return captured_;
}

void CapturingScorer::clear_captured() {
  std::lock_guard<std::mutex> lock(mutex_);
  captured_.clear();
}

std::vector<ScoredCandidate> score_candidates(const Corpus& corpus,
                                              const std::vector<Candidate>& candidates,
                                              Scorer& scorer, ScoreMode mode) {
  std::vector<ScoredCandidate> out;
  out.reserve(candidates.size());
  std::vector<std::size_t> request_index;
  std::vector<ScoreRequest> requests;

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& candidate = candidates[i];
    ScoredCandidate scored;
    scored.candidate = candidate;
    scored.scorer_id = scorer.id();
    scored.mode = mode;
    scored.scale = scorer.scale();

    const ParallelExample* example = corpus.find(candidate.task.example_id);
    std::string reference;
    std::string problem;
    if (!example) {
      problem = "example not in corpus";
    } else if (candidate.text.empty()) {
      problem = "empty candidate text";
    } else {
      switch (mode) {
        case ScoreMode::proxy_en:
          reference = example->english_text;
          if (reference.empty()) problem = "example has no english text";
          break;
        case ScoreMode::direct_rm:
          reference = example->source_text;
          break;
        case ScoreMode::reference_metric:
          if (candidate.task.tgt != example->source_lang)
            problem = "no annotated reference in " + candidate.task.tgt.code;
          else
            reference = example->source_text;
          break;
        case ScoreMode::llm_judge:
          reference = example->source_text;
          break;
      }
    }
    if (problem.empty() && reference.empty()) problem = "empty reference text";

    if (problem.empty()) {
      ScoreRequest request;
      request.id = candidate.task.example_id + ":" +
                   Direction{candidate.task.src, candidate.task.tgt}.label() + ":" +
                   strategy_name(candidate.task.strategy) + ":" +
                   std::to_string(candidate.sample_index);
      request.reference_text = reference;
      request.candidate_text = candidate.text;
      request.tgt_lang = candidate.task.tgt;
      request_index.push_back(i);
      requests.push_back(std::move(request));
    } else {
      scored.error = problem;
    }
    out.push_back(std::move(scored));
  }

  if (!requests.empty()) {
    const auto outcomes = scorer.score_batch(requests);
    if (outcomes.size() != requests.size())
      throw Error("scorer returned " + std::to_string(outcomes.size()) + " outcomes for " +
                  std::to_string(requests.size()) + " requests");
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
      auto& scored = out[request_index[k]];
      const auto& outcome = outcomes[k];
      scored.out_of_range = outcome.out_of_range;
      scored.error = outcome.error;
      if (outcome.score && !scored.scale.contains(*outcome.score)) {
        scored.out_of_range = true;
        scored.error = "score " + std::to_string(*outcome.score) + " outside declared scale";
      } else {
        scored.score = outcome.score;
      }
    }
  }
  return out;
}

}  // namespace x2x
