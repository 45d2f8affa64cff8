#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "x2x/base.hpp"

namespace x2x {

// Two-letter lowercase language code. "en" is the anchor language: it appears
// as a pivot and reference but never as an x2x endpoint.
struct LanguageTag {
  std::string code;

  static LanguageTag parse(std::string_view text);
  bool is_english() const { return code == "en"; }

  bool operator==(const LanguageTag&) const = default;
  auto operator<=>(const LanguageTag&) const = default;
};

// Display name ("de" -> "German") for prompt rendering. Throws on tags with
// no known name. Names are single tokens, which template inverse matching
// depends on.
const std::string& language_display_name(const LanguageTag& tag);
bool has_language_display_name(const LanguageTag& tag);
std::optional<LanguageTag> language_tag_for_display_name(std::string_view name);

enum class DirectionClass { x2x, en2x, x2en };

struct Direction {
  LanguageTag src;
  LanguageTag tgt;

  static Direction make(LanguageTag src, LanguageTag tgt);
  DirectionClass classify() const;
  std::string label() const { return src.code + "-" + tgt.code; }

  bool operator==(const Direction&) const = default;
  auto operator<=>(const Direction&) const = default;
};

enum class DirectionFilter { x2x, en2x, x2en, all };

// All directions of the requested class over `langs`, lexicographically
// ordered by (src, tgt). `langs` must contain en plus at least one other tag.
std::vector<Direction> enumerate_directions(std::vector<LanguageTag> langs,
                                            DirectionFilter filter);

// One source-language sentence with its English reference.
struct ParallelExample {
  std::string id;
  LanguageTag source_lang;
  std::string source_text;   // normalized
  std::string english_text;  // normalized

  bool operator==(const ParallelExample&) const = default;
};

struct CorpusProvenance {
  std::string source_path;
  std::string format;       // "jsonl" | "tsv"
  std::string digest;       // fnv1a64 of the raw input bytes, hex
  std::size_t max_length = 0;  // 0 = no length filter

  bool operator==(const CorpusProvenance&) const = default;
};

struct RejectedRecord {
  std::size_t line_no;
  std::string reason;
};

class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<ParallelExample> examples, CorpusProvenance provenance);

  const std::vector<ParallelExample>& examples() const { return examples_; }
  const CorpusProvenance& provenance() const { return provenance_; }
  std::size_t size() const { return examples_.size(); }

  const ParallelExample& by_id(const std::string& id) const;
  const ParallelExample* find(const std::string& id) const;

  // Distinct source languages in first-appearance order.
  std::vector<LanguageTag> source_languages() const;

  bool operator==(const Corpus& other) const {
    return examples_ == other.examples_ && provenance_ == other.provenance_;
  }

 private:
  std::vector<ParallelExample> examples_;
  CorpusProvenance provenance_;
  std::vector<std::size_t> id_index_;  // indices sorted by example id
};

enum class CorpusFormat { jsonl, tsv };

struct IngestOptions {
  CorpusFormat format = CorpusFormat::jsonl;
  // TSV carries no per-record language, so the caller supplies one. JSONL
  // records name their own source_lang; this value is then ignored.
  std::optional<LanguageTag> source_lang;
  // Abort when more than this fraction of records is malformed.
  double max_reject_fraction = 0.01;
  // Optional filter on normalized source_text length in code points; 0 = off.
  std::size_t max_length = 0;
};

struct IngestResult {
  Corpus corpus;
  std::vector<RejectedRecord> rejects;
};

// Parse, validate and normalize a corpus file. Records failing validation go
// to the rejects report; duplicate ids abort; a reject fraction above the
// configured tolerance aborts.
IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options);

// Canonical JSONL serialization of a corpus (the ingest round-trip target).
void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);
void write_rejects_report(const std::vector<RejectedRecord>& rejects,
                          const std::filesystem::path& path);

}  // namespace x2x
