#include "x2x/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "x2x/jsonl.hpp"

namespace x2x {

namespace fs = std::filesystem;

LanguageTag LanguageTag::parse(std::string_view text) {
  if (text.size() != 2 || text[0] < 'a' || text[0] > 'z' || text[1] < 'a' ||
      text[1] > 'z')
    throw Error("invalid language tag '" + std::string(text) +
                "' (expected two lowercase letters)");
  return LanguageTag{std::string(text)};
}

namespace {

const std::map<std::string, std::string>& display_names() {
  static const std::map<std::string, std::string> names = {
      {"en", "English"},   {"de", "German"},     {"fr", "French"},
      {"nl", "Dutch"},     {"it", "Italian"},    {"es", "Spanish"},
      {"pt", "Portuguese"},{"ko", "Korean"},     {"ru", "Russian"},
      {"zh", "Chinese"},   {"ja", "Japanese"},   {"ar", "Arabic"},
      {"hi", "Hindi"},     {"tr", "Turkish"},    {"pl", "Polish"},
      {"sv", "Swedish"},   {"da", "Danish"},     {"fi", "Finnish"},
      {"cs", "Czech"},     {"el", "Greek"},      {"he", "Hebrew"},
      {"id", "Indonesian"},{"th", "Thai"},       {"uk", "Ukrainian"},
      {"vi", "Vietnamese"},{"ro", "Romanian"},   {"hu", "Hungarian"},
      {"bg", "Bulgarian"}, {"ca", "Catalan"},    {"no", "Norwegian"},
  };
  return names;
}

}  // namespace

const std::string& language_display_name(const LanguageTag& tag) {
  auto it = display_names().find(tag.code);
  if (it == display_names().end())
    throw Error("no display name for language tag '" + tag.code + "'");
  return it->second;
}

bool has_language_display_name(const LanguageTag& tag) {
  return display_names().count(tag.code) > 0;
}

std::optional<LanguageTag> language_tag_for_display_name(std::string_view name) {
  for (const auto& [code, display] : display_names())
    if (display == name) return LanguageTag{code};
  return std::nullopt;
}

Direction Direction::make(LanguageTag src, LanguageTag tgt) {
  if (src == tgt) throw Error("direction endpoints must differ: " + src.code);
  return Direction{std::move(src), std::move(tgt)};
}

DirectionClass Direction::classify() const {
  if (src.is_english()) return DirectionClass::en2x;
  if (tgt.is_english()) return DirectionClass::x2en;
  return DirectionClass::x2x;
}

std::vector<Direction> enumerate_directions(std::vector<LanguageTag> langs,
                                            DirectionFilter filter) {
  std::sort(langs.begin(), langs.end());
  langs.erase(std::unique(langs.begin(), langs.end()), langs.end());
  bool has_en = false;
  std::size_t non_english = 0;
  for (const auto& lang : langs) {
    if (lang.is_english())
      has_en = true;
    else
      ++non_english;
  }
  if (!has_en || non_english == 0)
    throw Error("language set must contain en plus at least one other tag");

  std::vector<Direction> out;
  for (const auto& src : langs) {
    for (const auto& tgt : langs) {
      if (src == tgt) continue;
      Direction d{src, tgt};
      DirectionClass cls = d.classify();
      bool keep = filter == DirectionFilter::all ||
                  (filter == DirectionFilter::x2x && cls == DirectionClass::x2x) ||
                  (filter == DirectionFilter::en2x && cls == DirectionClass::en2x) ||
                  (filter == DirectionFilter::x2en && cls == DirectionClass::x2en);
      if (keep) out.push_back(std::move(d));
    }
  }
  // langs is sorted, so the nested loop already yields (src, tgt) order.
  return out;
}

Corpus::Corpus(std::vector<ParallelExample> examples, CorpusProvenance provenance)
    : examples_(std::move(examples)), provenance_(std::move(provenance)) {
  id_index_.resize(examples_.size());
  for (std::size_t i = 0; i < examples_.size(); ++i) id_index_[i] = i;
  std::sort(id_index_.begin(), id_index_.end(), [&](std::size_t a, std::size_t b) {
    return examples_[a].id < examples_[b].id;
  });
  for (std::size_t i = 1; i < id_index_.size(); ++i)
    if (examples_[id_index_[i - 1]].id == examples_[id_index_[i]].id)
      throw Error("duplicate example id '" + examples_[id_index_[i]].id + "'");
}

const ParallelExample* Corpus::find(const std::string& id) const {
  auto it = std::lower_bound(
      id_index_.begin(), id_index_.end(), id,
      [&](std::size_t idx, const std::string& key) { return examples_[idx].id < key; });
  if (it == id_index_.end() || examples_[*it].id != id) return nullptr;
  return &examples_[*it];
}

const ParallelExample& Corpus::by_id(const std::string& id) const {
  const ParallelExample* found = find(id);
  if (!found) throw Error("unknown example id '" + id + "'");
  return *found;
}

std::vector<LanguageTag> Corpus::source_languages() const {
  std::vector<LanguageTag> out;
  for (const auto& example : examples_)
    if (std::find(out.begin(), out.end(), example.source_lang) == out.end())
      out.push_back(example.source_lang);
  return out;
}

namespace {

struct RawRecord {
  std::string id;
  std::string source_lang;
  std::string source_text;
  std::string english_text;
};

// Validation shared by both formats; returns a reject reason or nullopt.
std::optional<std::string> validate_and_normalize(RawRecord& raw,
                                                  const IngestOptions& options,
                                                  ParallelExample& out) {
  if (raw.id.empty()) return "missing id";
  LanguageTag lang;
  try {
    lang = LanguageTag::parse(raw.source_lang);
  } catch (const Error& e) {
    return e.what();
  }
  if (lang.is_english()) return "source_lang must not be en";
  out.id = raw.id;
  out.source_lang = lang;
  out.source_text = normalize_whitespace(raw.source_text);
  out.english_text = normalize_whitespace(raw.english_text);
  if (out.source_text.empty()) return "empty source_text";
  if (out.english_text.empty()) return "empty english_text";
  if (options.max_length > 0 &&
      decode_utf8(out.source_text).size() > options.max_length)
    return "source_text longer than max_length";
  return std::nullopt;
}

}  // namespace

IngestResult ingest(const fs::path& path, const IngestOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string raw_bytes = buffer.str();

  IngestResult result;
  std::vector<ParallelExample> examples;
  std::size_t total_records = 0;

  auto consider = [&](RawRecord raw, std::size_t line_no) {
    ++total_records;
    ParallelExample example;
    if (auto reason = validate_and_normalize(raw, options, example)) {
      result.rejects.push_back({line_no, *reason});
      return;
    }
    examples.push_back(std::move(example));
  };

  std::istringstream lines(raw_bytes);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (options.format == CorpusFormat::jsonl) {
      Json record = Json::parse(line, nullptr, false);
      if (record.is_discarded() || !record.is_object()) {
        result.rejects.push_back({line_no, "malformed JSON object"});
        ++total_records;
        continue;
      }
      RawRecord raw;
      raw.id = record.value("id", "");
      raw.source_lang = record.value("source_lang", "");
      raw.source_text = record.value("source_text", "");
      raw.english_text = record.value("english_text", "");
      if (!record.contains("english_text")) {
        result.rejects.push_back({line_no, "missing english_text"});
        ++total_records;
        continue;
      }
      if (!record.contains("source_text")) {
        result.rejects.push_back({line_no, "missing source_text"});
        ++total_records;
        continue;
      }
      consider(std::move(raw), line_no);
    } else {
      if (!options.source_lang)
        throw Error("tsv ingestion requires --source-lang");
      RawRecord raw;
      raw.source_lang = options.source_lang->code;
      std::size_t tab1 = line.find('\t');
      std::size_t tab2 = tab1 == std::string::npos ? std::string::npos
                                                   : line.find('\t', tab1 + 1);
      if (tab1 == std::string::npos || tab2 == std::string::npos) {
        result.rejects.push_back({line_no, "expected id<TAB>source<TAB>english"});
        ++total_records;
        continue;
      }
      raw.id = line.substr(0, tab1);
      raw.source_text = line.substr(tab1 + 1, tab2 - tab1 - 1);
      raw.english_text = line.substr(tab2 + 1);
      consider(std::move(raw), line_no);
    }
  }

  if (total_records == 0) throw Error("corpus file has no records: " + path.string());
  double reject_fraction =
      static_cast<double>(result.rejects.size()) / static_cast<double>(total_records);
  if (!result.rejects.empty() && reject_fraction > options.max_reject_fraction) {
    std::ostringstream msg;
    msg << "rejected " << result.rejects.size() << "/" << total_records
        << " records, above tolerance " << options.max_reject_fraction
        << "; first: line " << result.rejects.front().line_no << " ("
        << result.rejects.front().reason << ")";
    throw Error(msg.str());
  }

  CorpusProvenance provenance;
  provenance.source_path = path.string();
  provenance.format = options.format == CorpusFormat::jsonl ? "jsonl" : "tsv";
  provenance.digest = to_hex(fnv1a64(raw_bytes));
  provenance.max_length = options.max_length;
  result.corpus = Corpus(std::move(examples), std::move(provenance));
  return result;
}

void write_corpus_jsonl(const Corpus& corpus, const fs::path& path) {
  std::vector<Json> records;
  records.reserve(corpus.size());
  for (const auto& example : corpus.examples()) {
    records.push_back(Json{{"id", example.id},
                           {"source_lang", example.source_lang.code},
                           {"source_text", example.source_text},
                           {"english_text", example.english_text}});
  }
  atomic_write_jsonl(path, records);
}

void write_rejects_report(const std::vector<RejectedRecord>& rejects,
                          const fs::path& path) {
  std::vector<Json> records;
  records.reserve(rejects.size());
  for (const auto& reject : rejects)
    records.push_back(Json{{"line_no", reject.line_no}, {"reason", reject.reason}});
  atomic_write_jsonl(path, records);
}

}  // namespace x2x
