#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "x2x/corpus.hpp"
#include "x2x/emit.hpp"
#include "x2x/prefs.hpp"
#include "x2x/prompts.hpp"
#include "x2x/score.hpp"
#include "x2x/synth.hpp"

namespace py = pybind11;

namespace {

x2x::CorpusFormat parse_format(const std::string& name) {
  if (name == "jsonl") return x2x::CorpusFormat::jsonl;
  if (name == "tsv") return x2x::CorpusFormat::tsv;
  throw x2x::Error("unknown corpus format '" + name + "'");
}

x2x::DirectionFilter parse_filter(const std::string& name) {
  if (name == "x2x") return x2x::DirectionFilter::x2x;
  if (name == "en2x") return x2x::DirectionFilter::en2x;
  if (name == "x2en") return x2x::DirectionFilter::x2en;
  if (name == "all") return x2x::DirectionFilter::all;
  throw x2x::Error("unknown direction filter '" + name + "'");
}

py::dict example_to_dict(const x2x::ParallelExample& example) {
  py::dict entry;
  entry["id"] = example.id;
  entry["source_lang"] = example.source_lang.code;
  entry["source_text"] = example.source_text;
  entry["english_text"] = example.english_text;
  return entry;
}

x2x::Corpus corpus_from_records(const std::vector<py::dict>& records) {
  std::vector<x2x::ParallelExample> examples;
  examples.reserve(records.size());
  for (const auto& record : records) {
    x2x::ParallelExample example;
    example.id = py::cast<std::string>(record["id"]);
    example.source_lang =
        x2x::LanguageTag::parse(py::cast<std::string>(record["source_lang"]));
    example.source_text = py::cast<std::string>(record["source_text"]);
    example.english_text = py::cast<std::string>(record["english_text"]);
    examples.push_back(std::move(example));
  }
  return x2x::Corpus(std::move(examples), x2x::CorpusProvenance{});
}

std::vector<std::pair<std::string, std::string>> messages_to_pairs(
    const std::vector<x2x::Message>& messages) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(messages.size());
  for (const auto& message : messages)
    out.emplace_back(x2x::role_name(message.role), message.text);
  return out;
}

}  // namespace

PYBIND11_MODULE(_x2xdata, m) {
  m.doc() = "x2x translation training-data pipeline core";

  py::register_exception<x2x::Error>(m, "PipelineError");

  m.def(
      "ingest_corpus",
      [](const std::filesystem::path& path, const std::string& format,
         const std::optional<std::string>& source_lang, double max_reject_fraction,
         std::size_t max_length) {
        x2x::IngestOptions options;
        options.format = parse_format(format);
        if (source_lang) options.source_lang = x2x::LanguageTag::parse(*source_lang);
        options.max_reject_fraction = max_reject_fraction;
        options.max_length = max_length;
        const auto result = x2x::ingest(path, options);
        py::list examples;
        for (const auto& example : result.corpus.examples())
          examples.append(example_to_dict(example));
        py::list rejects;
        for (const auto& reject : result.rejects) {
          py::dict entry;
          entry["line_no"] = reject.line_no;
          entry["reason"] = reject.reason;
          rejects.append(entry);
        }
        return py::make_tuple(examples, rejects);
      },
      py::arg("path"), py::arg("format") = "jsonl", py::arg("source_lang") = py::none(),
      py::arg("max_reject_fraction") = 0.01, py::arg("max_length") = 0,
      "Parse, validate and normalize a parallel corpus; returns (examples, rejects).");

  m.def(
      "enumerate_directions",
      [](const std::vector<std::string>& langs, const std::string& filter) {
        std::vector<x2x::LanguageTag> tags;
        tags.reserve(langs.size());
        for (const auto& code : langs) tags.push_back(x2x::LanguageTag::parse(code));
        std::vector<std::string> labels;
        for (const auto& direction : x2x::enumerate_directions(tags, parse_filter(filter)))
          labels.push_back(direction.label());
        return labels;
      },
      py::arg("langs"), py::arg("filter") = "x2x",
      "Direction labels of the requested class over a language set (en included).");

  m.def(
      "chrf_surrogate",
      [](const std::string& reference, const std::string& candidate) {
        x2x::SurrogateMetricScorer scorer;
        x2x::ScoreRequest request;
        request.id = "py";
        request.reference_text = reference;
        request.candidate_text = candidate;
        request.tgt_lang = x2x::LanguageTag{"de"};
        const auto outcome = scorer.score_batch({request}).at(0);
        if (!outcome.score) throw x2x::Error(outcome.error);
        return *outcome.score;
      },
      py::arg("reference"), py::arg("candidate"),
      "Character n-gram F-score surrogate on the 0..100 scale.");

  m.def(
      "select_pair",
      [](const std::vector<py::dict>& samples) -> py::object {
        std::vector<x2x::ScoredCandidate> scored;
        scored.reserve(samples.size());
        int index = 0;
        for (const auto& sample : samples) {
          x2x::ScoredCandidate entry;
          entry.candidate.task.example_id = "py";
          entry.candidate.task.src = x2x::LanguageTag{"de"};
          entry.candidate.task.tgt = x2x::LanguageTag{"fr"};
          entry.candidate.sample_index =
              sample.contains("sample_index")
                  ? py::cast<int>(sample["sample_index"])
                  : index;
          entry.candidate.text = py::cast<std::string>(sample["text"]);
          if (sample.contains("degenerate"))
            entry.candidate.degenerate = py::cast<bool>(sample["degenerate"]);
          if (sample.contains("score") && !sample["score"].is_none())
            entry.score = py::cast<double>(sample["score"]);
          entry.scorer_id = "py";
          scored.push_back(std::move(entry));
          ++index;
        }
        const auto pair = x2x::select_pair(scored);
        if (!pair) return py::none();
        py::dict out;
        out["chosen_sample_index"] = pair->chosen_sample_index;
        out["chosen_text"] = pair->chosen_text;
        out["chosen_score"] = pair->chosen_score;
        out["rejected_sample_index"] = pair->rejected_sample_index;
        out["rejected_text"] = pair->rejected_text;
        out["rejected_score"] = pair->rejected_score;
        out["margin"] = pair->margin;
        return out;
      },
      py::arg("samples"),
      "Best/worst selection over one sample group; None when no valid pair exists. "
      "Each sample is a dict with text, score (None = unscored), degenerate.");

  m.def(
      "filter_preferences",
      [](const std::vector<py::dict>& pairs, const std::optional<double>& min_margin,
         const std::optional<double>& target_retention,
         const std::optional<double>& min_chosen_score, bool per_direction) {
        std::vector<x2x::PreferencePair> input;
        input.reserve(pairs.size());
        std::size_t index = 0;
        for (const auto& pair : pairs) {
          x2x::PreferencePair entry;
          entry.example_id = std::to_string(index++);
          if (pair.contains("direction")) {
            const auto label = py::cast<std::string>(pair["direction"]);
            const auto dash = label.find('-');
            if (dash == std::string::npos)
              throw x2x::Error("direction label must be src-tgt");
            entry.direction =
                x2x::Direction{x2x::LanguageTag::parse(label.substr(0, dash)),
                               x2x::LanguageTag::parse(label.substr(dash + 1))};
          } else {
            entry.direction = x2x::Direction{x2x::LanguageTag{"de"}, x2x::LanguageTag{"fr"}};
          }
          entry.chosen_score = py::cast<double>(pair["chosen_score"]);
          entry.rejected_score = py::cast<double>(pair["rejected_score"]);
          entry.margin = entry.chosen_score - entry.rejected_score;
          input.push_back(std::move(entry));
        }
        x2x::FilterPolicy policy;
        policy.min_margin = min_margin;
        policy.target_retention = target_retention;
        policy.min_chosen_score = min_chosen_score;
        policy.per_direction = per_direction;
        policy.validate();
        const auto result = x2x::filter_pairs(input, policy);
        std::vector<std::size_t> kept_indices;
        kept_indices.reserve(result.kept.size());
        for (const auto& pair : result.kept)
          kept_indices.push_back(std::stoull(pair.example_id));
        py::dict stats;
        stats["input"] = result.stats.input;
        stats["kept"] = result.stats.kept;
        stats["dropped"] = result.stats.dropped;
        stats["retention"] = result.stats.retention();
        return py::make_tuple(kept_indices, stats);
      },
      py::arg("pairs"), py::arg("min_margin") = py::none(),
      py::arg("target_retention") = py::none(), py::arg("min_chosen_score") = py::none(),
      py::arg("per_direction") = false,
      "Apply a filter policy to (chosen_score, rejected_score[, direction]) dicts; "
      "returns (kept_indices, stats).");

  m.def(
      "plan_tasks",
      [](const std::vector<py::dict>& examples, const std::vector<std::string>& langs,
         const std::string& strategy) {
        const auto corpus = corpus_from_records(examples);
        std::vector<x2x::LanguageTag> tags;
        tags.reserve(langs.size());
        for (const auto& code : langs) tags.push_back(x2x::LanguageTag::parse(code));
        const auto plan =
            x2x::plan_expansion(corpus, tags, x2x::parse_strategy(strategy));
        return py::make_tuple(plan.tasks.size(), plan.rejected.size());
      },
      py::arg("examples"), py::arg("langs"), py::arg("strategy") = "eaxt",
      "Count (planned, skipped) generation tasks for a corpus and language set.");

  m.def(
      "render_direct",
      [](const std::string& src, const std::string& tgt, const std::string& source_text,
         std::uint64_t seed) {
        const auto registry = x2x::TemplateRegistry::with_builtins();
        const auto& tpl =
            registry.pick(x2x::TemplateKind::direct, seed, src + "-" + tgt);
        return messages_to_pairs(
            x2x::render_direct(tpl, x2x::LanguageTag::parse(src),
                               x2x::LanguageTag::parse(tgt), source_text)
                .messages);
      },
      py::arg("src"), py::arg("tgt"), py::arg("source_text"), py::arg("seed") = 0,
      "Render a plain translation prompt as (role, text) message pairs.");

  m.def(
      "render_eaxt",
      [](const std::string& src, const std::string& tgt, const std::string& source_text,
         const std::string& english_text, std::uint64_t seed) {
        const auto registry = x2x::TemplateRegistry::with_builtins();
        const auto& tpl = registry.pick(x2x::TemplateKind::eaxt, seed, src + "-" + tgt);
        return messages_to_pairs(
            x2x::render_eaxt(tpl, x2x::LanguageTag::parse(src),
                             x2x::LanguageTag::parse(tgt), source_text, english_text)
                .messages);
      },
      py::arg("src"), py::arg("tgt"), py::arg("source_text"), py::arg("english_text"),
      py::arg("seed") = 0,
      "Render an English-anchored translation prompt as (role, text) pairs.");

  m.def(
      "training_defaults_json",
      [] { return x2x::recommended_training_defaults().dump(); },
      "Recommended downstream training settings as a JSON string.");
}
