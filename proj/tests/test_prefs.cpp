#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "x2x/prefs.hpp"
#include "x2x/rng.hpp"

using namespace x2x;
namespace fs = std::filesystem;

namespace {

const LanguageTag kDe = LanguageTag::parse("de");
const LanguageTag kFr = LanguageTag::parse("fr");
const LanguageTag kEs = LanguageTag::parse("es");
const LanguageTag kEn = LanguageTag::parse("en");

ScoredCandidate scored(const std::string& example_id, const LanguageTag& src,
                       const LanguageTag& tgt, int sample_index, const std::string& text,
                       std::optional<double> score, bool degenerate = false,
                       const std::string& scorer_id = "test") {
  ScoredCandidate entry;
  entry.candidate.task = SynthTask{example_id, src, tgt, Strategy::direct};
  entry.candidate.sample_index = sample_index;
  entry.candidate.text = text;
  entry.candidate.degenerate = degenerate;
  entry.score = score;
  entry.scorer_id = scorer_id;
  entry.scale = ScoreScale{0.0, 100.0};
  return entry;
}

PreferencePair pair_with_margin(const std::string& id, double margin,
                                double chosen_score = 90.0,
                                const Direction& direction = Direction{kDe, kFr}) {
  PreferencePair pair;
  pair.example_id = id;
  pair.direction = direction;
  pair.chosen_text = "chosen " + id;
  pair.chosen_score = chosen_score;
  pair.rejected_text = "rejected " + id;
  pair.rejected_score = chosen_score - margin;
  pair.margin = margin;
  pair.scorer_id = "test";
  return pair;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "x2x_prefs_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("pair selection takes the best and worst scored candidates") {
  auto pair = select_pair({
      scored("ex", kDe, kFr, 0, "t0", 80.0),
      scored("ex", kDe, kFr, 1, "t1", 60.0),
      scored("ex", kDe, kFr, 2, "t2", 90.0),
      scored("ex", kDe, kFr, 3, "t3", 70.0),
  });
  REQUIRE(pair.has_value());
  CHECK(pair->chosen_text == "t2");
  CHECK(pair->chosen_score == 90.0);
  CHECK(pair->chosen_sample_index == 2);
  CHECK(pair->rejected_text == "t1");
  CHECK(pair->rejected_score == 60.0);
  CHECK(pair->rejected_sample_index == 1);
  CHECK(pair->margin == 30.0);
  CHECK(pair->example_id == "ex");
  CHECK(pair->direction.label() == "de-fr");
  CHECK(pair->scorer_id == "test");
}

TEST_CASE("pair selection breaks ties toward the lowest sample index") {
  auto top_tie = select_pair({
      scored("ex", kDe, kFr, 2, "a", 85.0),
      scored("ex", kDe, kFr, 0, "b", 85.0),
      scored("ex", kDe, kFr, 1, "c", 40.0),
  });
  REQUIRE(top_tie.has_value());
  CHECK(top_tie->chosen_sample_index == 0);

  auto bottom_tie = select_pair({
      scored("ex", kDe, kFr, 0, "a", 90.0),
      scored("ex", kDe, kFr, 2, "b", 30.0),
      scored("ex", kDe, kFr, 1, "c", 30.0),
  });
  REQUIRE(bottom_tie.has_value());
  CHECK(bottom_tie->rejected_sample_index == 1);

  // Equal scores with distinct texts still form a zero-margin pair.
  auto flat = select_pair({
      scored("ex", kDe, kFr, 0, "a", 70.0),
      scored("ex", kDe, kFr, 1, "b", 70.0),
  });
  REQUIRE(flat.has_value());
  CHECK(flat->margin == 0.0);
  CHECK(flat->chosen_text == "a");
  CHECK(flat->rejected_text == "b");
}

TEST_CASE("pair selection ignores unscored entries") {
  auto pair = select_pair({
      scored("ex", kDe, kFr, 0, "t0", std::nullopt),
      scored("ex", kDe, kFr, 1, "t1", 75.0),
      scored("ex", kDe, kFr, 2, "t2", 50.0),
  });
  REQUIRE(pair.has_value());
  CHECK(pair->chosen_score == 75.0);
  CHECK(pair->rejected_score == 50.0);
}

TEST_CASE("degenerate candidates may only land on the rejected side") {
  auto skip_top = select_pair({
      scored("ex", kDe, kFr, 0, "copy", 95.0, /*degenerate=*/true),
      scored("ex", kDe, kFr, 1, "good", 70.0),
      scored("ex", kDe, kFr, 2, "weak", 55.0),
  });
  REQUIRE(skip_top.has_value());
  CHECK(skip_top->chosen_text == "good");
  CHECK(skip_top->rejected_text == "weak");

  auto as_rejected = select_pair({
      scored("ex", kDe, kFr, 0, "good", 80.0),
      scored("ex", kDe, kFr, 1, "", 60.0, /*degenerate=*/true),
  });
  REQUIRE(as_rejected.has_value());
  CHECK(as_rejected->chosen_text == "good");
  CHECK(as_rejected->rejected_score == 60.0);

  CHECK_FALSE(select_pair({
                              scored("ex", kDe, kFr, 0, "a", 90.0, true),
                              scored("ex", kDe, kFr, 1, "b", 80.0, true),
                          })
                  .has_value());
}

TEST_CASE("pair selection refuses unusable groups") {
  CHECK_THROWS_AS(select_pair({}), Error);
  CHECK_THROWS_AS(select_pair({
                      scored("ex", kDe, kFr, 0, "a", 80.0, false, "scorer-one"),
                      scored("ex", kDe, kFr, 1, "b", 60.0, false, "scorer-two"),
                  }),
                  Error);

  // No scores at all.
  CHECK_FALSE(select_pair({scored("ex", kDe, kFr, 0, "a", std::nullopt)}).has_value());
  // A single candidate has no counterpart.
  CHECK_FALSE(select_pair({scored("ex", kDe, kFr, 0, "a", 80.0)}).has_value());
  // Identical chosen and rejected text carries no signal.
  CHECK_FALSE(select_pair({
                              scored("ex", kDe, kFr, 0, "same", 80.0),
                              scored("ex", kDe, kFr, 1, "same", 60.0),
                          })
                  .has_value());
}

TEST_CASE("pair selection is invariant under monotone score transforms") {
  DetRng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ScoredCandidate> group;
    const int size = 2 + static_cast<int>(rng.next_below(4));
    for (int i = 0; i < size; ++i) {
      const bool has_score = rng.next_double() > 0.15;
      group.push_back(scored("ex", kDe, kFr, i, "text-" + std::to_string(i),
                             has_score ? std::optional<double>(rng.next_double() * 100.0)
                                       : std::nullopt,
                             rng.next_double() < 0.2));
    }
    const auto base = select_pair(group);

    auto affine = group;
    for (auto& entry : affine)
      if (entry.score) entry.score = 2.0 * *entry.score + 5.0;
    const auto shifted = select_pair(affine);

    auto cubed = group;
    for (auto& entry : cubed)
      if (entry.score) entry.score = *entry.score * *entry.score * *entry.score;
    const auto powered = select_pair(cubed);

    CHECK(base.has_value() == shifted.has_value());
    CHECK(base.has_value() == powered.has_value());
    if (base) {
      CHECK(base->chosen_sample_index == shifted->chosen_sample_index);
      CHECK(base->rejected_sample_index == shifted->rejected_sample_index);
      CHECK(base->chosen_sample_index == powered->chosen_sample_index);
      CHECK(base->rejected_sample_index == powered->rejected_sample_index);
      CHECK(base->margin >= 0.0);
    }
  }
}

TEST_CASE("filter policies validate their invariants") {
  FilterPolicy both;
  both.min_margin = 20.0;
  both.target_retention = 0.2;
  CHECK_THROWS_AS(both.validate(), Error);

  FilterPolicy neither;
  CHECK_THROWS_AS(neither.validate(), Error);

  FilterPolicy bad_retention;
  bad_retention.target_retention = 1.5;
  CHECK_THROWS_AS(bad_retention.validate(), Error);

  const auto rm = rm_filter_policy();
  CHECK(*rm.min_margin == 20.0);
  CHECK(*rm.min_chosen_score == 70.0);
  CHECK_FALSE(rm.target_retention.has_value());
  CHECK_NOTHROW(rm.validate());

  const auto x2x = x2x_filter_policy();
  CHECK(*x2x.target_retention == 0.2);
  CHECK_FALSE(x2x.min_margin.has_value());
  CHECK_NOTHROW(x2x.validate());
}

TEST_CASE("margin filtering keeps pairs at or above the threshold") {
  FilterPolicy policy;
  policy.min_margin = 20.0;
  const auto result = filter_pairs(
      {pair_with_margin("a", 25.0), pair_with_margin("b", 20.0), pair_with_margin("c", 15.0)},
      policy);
  REQUIRE(result.kept.size() == 2);
  CHECK(result.kept[0].example_id == "a");
  CHECK(result.kept[1].example_id == "b");
  REQUIRE(result.dropped.size() == 1);
  CHECK(result.dropped[0].example_id == "c");
  CHECK(result.stats.input == 3);
  CHECK(result.stats.kept == 2);
  CHECK(result.stats.dropped == 1);
  CHECK(result.stats.retention() == doctest::Approx(2.0 / 3.0));
  CHECK(result.stats.per_direction.at("de-fr").kept == 2);
}

TEST_CASE("the chosen-score floor is an additional condition") {
  const auto result = filter_pairs(
      {
          pair_with_margin("strong", 25.0, 90.0),
          pair_with_margin("weak_chosen", 25.0, 65.0),  // margin fine, chosen too low
          pair_with_margin("weak_margin", 10.0, 95.0),
      },
      rm_filter_policy());
  REQUIRE(result.kept.size() == 1);
  CHECK(result.kept[0].example_id == "strong");
  CHECK(result.stats.dropped == 2);
}

TEST_CASE("retention filtering keeps the top fraction by margin") {
  std::vector<PreferencePair> pairs;
  for (int i = 1; i <= 10; ++i)
    pairs.push_back(pair_with_margin("p" + std::to_string(i), static_cast<double>(i)));

  FilterPolicy policy;
  policy.target_retention = 0.2;
  const auto result = filter_pairs(pairs, policy);
  REQUIRE(result.kept.size() == 2);
  std::set<std::string> kept_ids;
  for (const auto& pair : result.kept) kept_ids.insert(pair.example_id);
  CHECK(kept_ids == std::set<std::string>{"p9", "p10"});

  SUBCASE("ties at the cutoff are kept") {
    pairs.push_back(pair_with_margin("p9b", 9.0));
    const auto tied = filter_pairs(pairs, policy);
    CHECK(tied.kept.size() == 3);  // round(0.2 * 11) = 2, both margin-9 pairs survive
  }

  SUBCASE("edge retentions") {
    FilterPolicy none;
    none.target_retention = 0.0;
    CHECK(filter_pairs(pairs, none).kept.empty());
    FilterPolicy all;
    all.target_retention = 1.0;
    CHECK(filter_pairs(pairs, all).kept.size() == pairs.size());
  }

  SUBCASE("the kept set is independent of input order") {
    auto shuffled = pairs;
    DetRng rng(4);
    for (std::size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[rng.next_below(i)]);
    const auto reshuffled = filter_pairs(shuffled, policy);
    std::set<std::string> again;
    for (const auto& pair : reshuffled.kept) again.insert(pair.example_id);
    CHECK(again == kept_ids);
  }
}

TEST_CASE("per-direction retention computes one cutoff per direction") {
  std::vector<PreferencePair> pairs;
  const Direction de_fr{kDe, kFr};
  const Direction fr_es{kFr, kEs};
  pairs.push_back(pair_with_margin("a1", 10.0, 90.0, de_fr));
  for (int i = 0; i < 4; ++i)
    pairs.push_back(pair_with_margin("a" + std::to_string(i + 2), 1.0, 90.0, de_fr));
  pairs.push_back(pair_with_margin("b1", 100.0, 90.0, fr_es));
  pairs.push_back(pair_with_margin("b2", 90.0, 90.0, fr_es));
  for (int i = 0; i < 3; ++i)
    pairs.push_back(pair_with_margin("b" + std::to_string(i + 3), 2.0, 90.0, fr_es));

  FilterPolicy global;
  global.target_retention = 0.2;
  const auto pooled = filter_pairs(pairs, global);
  std::set<std::string> pooled_ids;
  for (const auto& pair : pooled.kept) pooled_ids.insert(pair.example_id);
  CHECK(pooled_ids == std::set<std::string>{"b1", "b2"});  // global cutoff 90

  FilterPolicy split = global;
  split.per_direction = true;
  const auto separate = filter_pairs(pairs, split);
  std::set<std::string> split_ids;
  for (const auto& pair : separate.kept) split_ids.insert(pair.example_id);
  CHECK(split_ids == std::set<std::string>{"a1", "b1"});  // one per direction
  CHECK(separate.stats.per_direction.at("de-fr").kept == 1);
  CHECK(separate.stats.per_direction.at("fr-es").kept == 1);
}

TEST_CASE("preference building scores, groups, selects and filters") {
  Corpus corpus({{"ex1", kDe, "Guten Morgen", "Good morning"},
                 {"ex2", kDe, "Danke schoen", "Thank you"}},
                CorpusProvenance{});

  auto with_marker = [](const std::string& stem, double quality) {
    return stem + MockBackend::format_marker(quality);
  };
  std::vector<Candidate> candidates;
  auto add = [&](const std::string& id, int index, const std::string& text,
                 bool degenerate = false) {
    Candidate candidate;
    candidate.task = SynthTask{id, kDe, kFr, Strategy::direct};
    candidate.sample_index = index;
    candidate.text = text;
    candidate.degenerate = degenerate;
    candidates.push_back(candidate);
  };
  add("ex1", 0, with_marker("bon matin", 0.9));
  add("ex1", 1, with_marker("salut", 0.5));
  add("ex1", 2, with_marker("bonjour", 0.7));
  add("ex2", 0, with_marker("merci bien", 0.8));
  add("ex2", 1, with_marker("merci", 0.75));
  add("ex2", 2, "marker-free output");        // stays unscored
  add("ex2", 3, "", /*degenerate=*/true);     // flagged degenerate

  MarkerScorer scorer;
  PrefsOptions options;
  options.policy = FilterPolicy{};
  options.policy.min_margin = 20.0;

  const auto result = build_x2x_preferences(corpus, candidates, scorer, options);
  CHECK(result.groups == 2);
  CHECK(result.groups_without_pair == 0);
  CHECK(result.unscored_candidates == 2);  // the marker-free and the empty one
  CHECK(result.degenerate_candidates == 1);

  REQUIRE(result.kept.size() == 1);
  const auto& kept = result.kept[0];
  CHECK(kept.example_id == "ex1");
  CHECK(kept.chosen_score == doctest::Approx(90.0));
  CHECK(kept.rejected_score == doctest::Approx(50.0));
  CHECK(kept.margin == doctest::Approx(40.0));
  CHECK(kept.source_text == "Guten Morgen");
  CHECK(kept.english_text == "Good morning");
  CHECK(kept.scorer_id == "mock:marker");

  REQUIRE(result.dropped.size() == 1);
  CHECK(result.dropped[0].example_id == "ex2");  // margin 5 under the threshold
  CHECK(result.zero_survivor_directions.empty());

  PrefsOptions strict = options;
  strict.policy.min_margin = 50.0;
  const auto starved = build_x2x_preferences(corpus, candidates, scorer, strict);
  CHECK(starved.kept.empty());
  CHECK(starved.zero_survivor_directions == std::vector<std::string>{"de-fr"});
}

TEST_CASE("prebuilt scores can drive selection with the English side as source") {
  Corpus corpus({{"ex", kDe, "Guten Morgen", "Good morning"}}, CorpusProvenance{});
  std::vector<ScoredCandidate> entries{
      scored("ex", kEn, kDe, 0, "Guten Morgen zusammen", 90.0),
      scored("ex", kEn, kDe, 1, "Morgen", 60.0),
  };
  FilterPolicy policy;
  policy.min_margin = 10.0;

  const auto result = build_preferences_from_scored(corpus, entries, policy,
                                                    /*english_is_source=*/true);
  REQUIRE(result.kept.size() == 1);
  CHECK(result.kept[0].source_text == "Good morning");
  CHECK(result.kept[0].english_text == "Good morning");
  CHECK(result.kept[0].direction.label() == "en-de");

  const auto native = build_preferences_from_scored(corpus, entries, policy,
                                                    /*english_is_source=*/false);
  CHECK(native.kept[0].source_text == "Guten Morgen");
}

TEST_CASE("reward data generation goes English-to-source and filters hard") {
  Corpus corpus({{"r1", kDe, "Der Zug ist puenktlich", "The train is on time"},
                 {"r2", kFr, "Le train est a l'heure", "The train is punctual"},
                 {"skip-en", kEn, "Plain English", "Plain English"},
                 {"skip-bare", kDe, "Ohne Anker", ""}},
                CorpusProvenance{});
  const auto registry = TemplateRegistry::with_builtins();

  MockConfig config;
  config.noise_sigma = 0.0;  // decay alone: qualities 0.80, 0.72, 0.64, 0.56
  MockBackend backend(registry, config);
  MarkerScorer metric;

  RmDataOptions options;
  options.seed = 9;

  const auto result = build_rm_dataset(corpus, backend, registry, metric, options);
  CHECK(result.groups == 2);  // en-source and anchor-free examples are skipped
  CHECK(result.generation_failures == 0);
  REQUIRE(result.kept.size() == 2);  // margin 24 >= 20, chosen 80 >= 70
  for (const auto& pair : result.kept) {
    CHECK(pair.direction.src == kEn);
    CHECK(pair.chosen_score == doctest::Approx(80.0).epsilon(1e-6));
    CHECK(pair.rejected_score == doctest::Approx(56.0).epsilon(1e-6));
    const auto& example = corpus.by_id(pair.example_id);
    CHECK(pair.direction.tgt == example.source_lang);
    CHECK(pair.source_text == example.english_text);
  }

  SUBCASE("a failing backend surfaces in the failure count") {
    MockConfig failing = config;
    failing.failure_rate = 1.0;
    MockBackend broken(registry, failing);
    const auto failed = build_rm_dataset(corpus, broken, registry, metric, options);
    CHECK(failed.generation_failures == 2);
    CHECK(failed.kept.empty());
    CHECK(failed.groups == 0);
  }

  SUBCASE("option validation") {
    RmDataOptions bad = options;
    bad.batch_size = 0;
    CHECK_THROWS_AS(build_rm_dataset(corpus, backend, registry, metric, bad), Error);
    RmDataOptions bad_policy = options;
    bad_policy.policy = FilterPolicy{};
    CHECK_THROWS_AS(build_rm_dataset(corpus, backend, registry, metric, bad_policy), Error);
  }
}

TEST_CASE("preference stores round-trip and rewrite byte-identically") {
  const auto dir = fresh_dir("store");
  const auto path = dir / "prefs.jsonl";

  std::vector<PreferencePair> pairs{pair_with_margin("a", 25.0),
                                    pair_with_margin("b", 5.0, 72.5)};
  pairs[0].source_text = "Guten Morgen";
  pairs[0].english_text = "Good morning";

  write_preferences(pairs, path);
  const auto loaded = read_preferences(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].example_id == "a");
  CHECK(loaded[0].source_text == "Guten Morgen");
  CHECK(loaded[0].english_text == "Good morning");
  CHECK(loaded[0].chosen_text == pairs[0].chosen_text);
  CHECK(loaded[0].rejected_text == pairs[0].rejected_text);
  CHECK(loaded[0].chosen_score == pairs[0].chosen_score);
  CHECK(loaded[0].rejected_score == pairs[0].rejected_score);
  CHECK(loaded[0].margin == pairs[0].margin);
  CHECK(loaded[0].scorer_id == pairs[0].scorer_id);
  CHECK(loaded[0].direction == pairs[0].direction);
  CHECK(loaded[1].chosen_score == 72.5);

  const auto first_bytes = slurp(path);
  write_preferences(loaded, path);
  CHECK(slurp(path) == first_bytes);
}
