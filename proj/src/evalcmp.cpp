#include "x2x/evalcmp.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace x2x {

void Aggregate::add(double value) {
  ++count;
  const double delta = value - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (value - mean);
}

double Aggregate::stddev() const {
  return count < 2 ? 0.0 : std::sqrt(m2 / static_cast<double>(count - 1));
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - std::floor(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

BoxStats BoxStats::from_values(std::vector<double> values) {
  if (values.empty()) throw Error("box statistics need at least one value");
  std::sort(values.begin(), values.end());
  BoxStats box;
  box.min = values.front();
  box.max = values.back();
  box.q1 = quantile_sorted(values, 0.25);
  box.median = quantile_sorted(values, 0.5);
  box.q3 = quantile_sorted(values, 0.75);
  const double iqr = box.q3 - box.q1;
  const double low_fence = box.q1 - 1.5 * iqr;
  const double high_fence = box.q3 + 1.5 * iqr;
  box.whisker_low = box.max;
  box.whisker_high = box.min;
  for (double value : values) {
    if (value >= low_fence) {
      box.whisker_low = std::min(box.whisker_low, value);
      break;
    }
  }
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    if (*it <= high_fence) {
      box.whisker_high = *it;
      break;
    }
  }
  for (double value : values) {
    if (value < low_fence) ++box.outliers_low;
    if (value > high_fence) ++box.outliers_high;
  }
  return box;
}

namespace {

struct InstanceKey {
  std::string example_id;
  std::string direction;
  int sample_index;

  auto operator<=>(const InstanceKey&) const = default;
};

std::string group_key(const Candidate& candidate) {
  return candidate.task.example_id + "|" +
         Direction{candidate.task.src, candidate.task.tgt}.label();
}

}  // namespace

CompareReport compare_strategies(
    const Corpus& corpus,
    const std::vector<std::pair<std::string, std::vector<Candidate>>>& stores,
    Scorer& scorer, const CompareOptions& options) {
  if (stores.size() < 2) throw Error("compare_strategies needs at least two stores");

  // Coverage check over (example, direction) groups.
  std::vector<std::set<std::string>> coverage(stores.size());
  for (std::size_t s = 0; s < stores.size(); ++s)
    for (const auto& candidate : stores[s].second)
      coverage[s].insert(group_key(candidate));
  for (std::size_t s = 1; s < stores.size(); ++s) {
    if (coverage[s] == coverage[0]) continue;
    std::ostringstream msg;
    msg << "coverage mismatch between '" << stores[0].first << "' and '"
        << stores[s].first << "':";
    int listed = 0;
    for (const auto& key : coverage[0])
      if (!coverage[s].count(key) && listed < 5)
        msg << " missing-from-" << stores[s].first << " " << key << ";", ++listed;
    for (const auto& key : coverage[s])
      if (!coverage[0].count(key) && listed < 10)
        msg << " extra-in-" << stores[s].first << " " << key << ";", ++listed;
    throw Error(msg.str());
  }

  CompareReport report;
  report.scorer_id = scorer.id();
  report.first_only = options.first_only;

  std::vector<std::map<InstanceKey, double>> per_store_scores(stores.size());
  for (std::size_t s = 0; s < stores.size(); ++s) {
    const auto& [name, all_candidates] = stores[s];
    std::vector<Candidate> candidates;
    candidates.reserve(all_candidates.size());
    for (const auto& candidate : all_candidates)
      if (!options.first_only || candidate.sample_index == 0)
        candidates.push_back(candidate);

    StrategyReport strategy_report;
    strategy_report.strategy = name;
    const auto scored = score_candidates(corpus, candidates, scorer, options.mode);
    std::vector<double> values;
    values.reserve(scored.size());
    for (const auto& entry : scored) {
      if (!entry.score) {
        ++strategy_report.unscored;
        continue;
      }
      ++strategy_report.scored;
      values.push_back(*entry.score);
      strategy_report.overall.add(*entry.score);
      strategy_report
          .per_direction[Direction{entry.candidate.task.src, entry.candidate.task.tgt}
                             .label()]
          .add(*entry.score);
      per_store_scores[s][InstanceKey{
          entry.candidate.task.example_id,
          Direction{entry.candidate.task.src, entry.candidate.task.tgt}.label(),
          entry.candidate.sample_index}] = *entry.score;
    }
    if (values.empty())
      throw Error("strategy '" + name + "' produced no scored candidates");
    strategy_report.box = BoxStats::from_values(std::move(values));
    report.strategies.push_back(std::move(strategy_report));
  }

  for (std::size_t a = 0; a < stores.size(); ++a) {
    for (std::size_t b = a + 1; b < stores.size(); ++b) {
      PairedComparison paired;
      paired.a = stores[a].first;
      paired.b = stores[b].first;
      Aggregate deltas;
      for (const auto& [key, score_a] : per_store_scores[a]) {
        auto it = per_store_scores[b].find(key);
        if (it == per_store_scores[b].end()) continue;
        const double delta = score_a - it->second;
        deltas.add(delta);
        if (delta > 0.0)
          ++paired.a_wins;
        else if (delta < 0.0)
          ++paired.b_wins;
        else
          ++paired.ties;
      }
      paired.instances = deltas.count;
      paired.mean_delta = deltas.count == 0 ? 0.0 : deltas.mean;
      report.paired.push_back(paired);
    }
  }
  return report;
}

namespace {

Json aggregate_to_json(const Aggregate& aggregate) {
  return Json{{"count", aggregate.count},
              {"mean", aggregate.mean},
              {"stddev", aggregate.stddev()}};
}

Json box_to_json(const BoxStats& box) {
  return Json{{"min", box.min},
              {"q1", box.q1},
              {"median", box.median},
              {"q3", box.q3},
              {"max", box.max},
              {"whisker_low", box.whisker_low},
              {"whisker_high", box.whisker_high},
              {"outliers_low", box.outliers_low},
              {"outliers_high", box.outliers_high}};
}

}  // namespace

Json CompareReport::to_json() const {
  Json strategies_json = Json::array();
  for (const auto& strategy : strategies) {
    Json directions = Json::object();
    for (const auto& [label, aggregate] : strategy.per_direction)
      directions[label] = aggregate_to_json(aggregate);
    strategies_json.push_back(Json{{"strategy", strategy.strategy},
                                   {"overall", aggregate_to_json(strategy.overall)},
                                   {"box", box_to_json(strategy.box)},
                                   {"per_direction", directions},
                                   {"scored", strategy.scored},
                                   {"unscored", strategy.unscored}});
  }
  Json paired_json = Json::array();
  for (const auto& comparison : paired)
    paired_json.push_back(Json{{"a", comparison.a},
                               {"b", comparison.b},
                               {"instances", comparison.instances},
                               {"mean_delta", comparison.mean_delta},
                               {"a_wins", comparison.a_wins},
                               {"ties", comparison.ties},
                               {"b_wins", comparison.b_wins}});
  return Json{{"scorer_id", scorer_id},
              {"first_only", first_only},
              {"strategies", strategies_json},
              {"paired", paired_json}};
}

std::string CompareReport::to_text() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "strategy comparison (scorer " << scorer_id << ", "
      << (first_only ? "first sample only" : "all samples") << ")\n";
  out << "  strategy      n      mean   stddev   median   q1..q3\n";
  for (const auto& strategy : strategies) {
    out << "  " << strategy.strategy;
    for (std::size_t pad = strategy.strategy.size(); pad < 10; ++pad) out << ' ';
    out << ' ' << strategy.overall.count << "  " << strategy.overall.mean << "  "
        << strategy.overall.stddev() << "  " << strategy.box.median << "  "
        << strategy.box.q1 << ".." << strategy.box.q3;
    if (strategy.unscored > 0) out << "  (" << strategy.unscored << " unscored)";
    out << "\n";
  }
  for (const auto& comparison : paired) {
    out << "  " << comparison.a << " vs " << comparison.b << ": mean delta "
        << comparison.mean_delta << " over " << comparison.instances << " instances ("
        << comparison.a_wins << " wins / " << comparison.ties << " ties / "
        << comparison.b_wins << " losses)\n";
  }
  return out.str();
}

std::string CompareReport::to_csv() const {
  std::ostringstream out;
  out << "strategy,direction,count,mean,stddev\n";
  for (const auto& strategy : strategies) {
    out << strategy.strategy << ",all," << strategy.overall.count << ','
        << strategy.overall.mean << ',' << strategy.overall.stddev() << "\n";
    for (const auto& [label, aggregate] : strategy.per_direction)
      out << strategy.strategy << ',' << label << ',' << aggregate.count << ','
          << aggregate.mean << ',' << aggregate.stddev() << "\n";
  }
  return out.str();
}

AblationReport ablation_scoring_modes(
    const Corpus& corpus, const std::vector<Candidate>& candidates,
    const std::vector<std::pair<ScoreMode, Scorer*>>& scorers) {
  if (scorers.size() < 2) throw Error("ablation needs at least two scoring modes");

  struct ModeSelections {
    std::string name;
    std::map<std::string, std::pair<int, int>> pair_by_group;  // chosen, rejected
    std::map<std::string, double> score_by_candidate;
  };

  AblationReport report;
  std::vector<ModeSelections> selections;
  for (const auto& [mode, scorer] : scorers) {
    ModeSelections current;
    current.name = score_mode_name(mode);
    auto scored = score_candidates(corpus, candidates, *scorer, mode);

    std::size_t unscored = 0;
    std::map<std::string, std::vector<ScoredCandidate>> groups;
    for (auto& entry : scored) {
      if (entry.score) {
        current.score_by_candidate[group_key(entry.candidate) + "#" +
                                   std::to_string(entry.candidate.sample_index)] =
            *entry.score;
      } else {
        ++unscored;
      }
      groups[group_key(entry.candidate)].push_back(std::move(entry));
    }
    for (const auto& [key, group] : groups) {
      if (auto pair = select_pair(group))
        current.pair_by_group[key] = {pair->chosen_sample_index,
                                      pair->rejected_sample_index};
    }
    report.unscored_per_mode[current.name] = unscored;
    selections.push_back(std::move(current));
  }

  for (std::size_t a = 0; a < selections.size(); ++a) {
    for (std::size_t b = a + 1; b < selections.size(); ++b) {
      ModeAgreement agreement;
      agreement.mode_a = selections[a].name;
      agreement.mode_b = selections[b].name;

      std::size_t chosen_match = 0, rejected_match = 0;
      for (const auto& [key, pair_a] : selections[a].pair_by_group) {
        auto it = selections[b].pair_by_group.find(key);
        if (it == selections[b].pair_by_group.end()) continue;
        ++agreement.common_groups;
        if (pair_a.first == it->second.first) ++chosen_match;
        if (pair_a.second == it->second.second) ++rejected_match;
      }
      if (agreement.common_groups > 0) {
        agreement.chosen_agreement = static_cast<double>(chosen_match) /
                                     static_cast<double>(agreement.common_groups);
        agreement.rejected_agreement = static_cast<double>(rejected_match) /
                                       static_cast<double>(agreement.common_groups);
      }

      // Pearson correlation over candidates both modes scored.
      Aggregate stats_a, stats_b;
      std::vector<std::pair<double, double>> joint;
      for (const auto& [key, score_a] : selections[a].score_by_candidate) {
        auto it = selections[b].score_by_candidate.find(key);
        if (it == selections[b].score_by_candidate.end()) continue;
        joint.emplace_back(score_a, it->second);
        stats_a.add(score_a);
        stats_b.add(it->second);
      }
      agreement.common_scored = joint.size();
      if (joint.size() >= 2 && stats_a.stddev() > 0.0 && stats_b.stddev() > 0.0) {
        double covariance = 0.0;
        for (const auto& [score_a, score_b] : joint)
          covariance += (score_a - stats_a.mean) * (score_b - stats_b.mean);
        covariance /= static_cast<double>(joint.size() - 1);
        agreement.score_correlation = covariance / (stats_a.stddev() * stats_b.stddev());
      }
      report.agreements.push_back(std::move(agreement));
    }
  }
  return report;
}

Json AblationReport::to_json() const {
  Json agreements_json = Json::array();
  for (const auto& agreement : agreements)
    agreements_json.push_back(Json{{"mode_a", agreement.mode_a},
                                   {"mode_b", agreement.mode_b},
                                   {"common_groups", agreement.common_groups},
                                   {"chosen_agreement", agreement.chosen_agreement},
                                   {"rejected_agreement", agreement.rejected_agreement},
                                   {"common_scored", agreement.common_scored},
                                   {"score_correlation", agreement.score_correlation}});
  Json unscored = Json::object();
  for (const auto& [mode, count] : unscored_per_mode) unscored[mode] = count;
  return Json{{"agreements", agreements_json}, {"unscored_per_mode", unscored}};
}

std::string AblationReport::to_text() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "scoring-mode ablation\n";
  for (const auto& agreement : agreements) {
    out << "  " << agreement.mode_a << " vs " << agreement.mode_b << ": chosen "
        << agreement.chosen_agreement << ", rejected " << agreement.rejected_agreement
        << " over " << agreement.common_groups << " groups; correlation "
        << agreement.score_correlation << " over " << agreement.common_scored
        << " candidates\n";
  }
  for (const auto& [mode, count] : unscored_per_mode)
    if (count > 0) out << "  " << mode << ": " << count << " unscored\n";
  return out.str();
}

}  // namespace x2x
