#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "x2x/jsonl.hpp"
#include "x2x/prefs.hpp"
#include "x2x/prompts.hpp"

namespace x2x {

enum class EmitFormat { dpo, sft_chosen, rm_pairs };

std::string emit_format_name(EmitFormat format);  // "dpo" | "sft-chosen" | "rm-pairs"
EmitFormat parse_emit_format(std::string_view name);

// Recommended downstream training settings, recorded in every manifest for
// provenance; nothing in this repository consumes them.
Json recommended_training_defaults();

struct DatasetManifest {
  std::string dataset;  // emitted file name
  std::string format;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::map<std::string, std::size_t> counts_per_direction;
  std::size_t filter_input = 0;
  std::size_t filter_kept = 0;
  double retention = 0.0;
  std::string scorer_id;
  std::vector<std::string> templates;
  Json training_defaults;

  Json to_json() const;
  static DatasetManifest from_json(const Json& doc);
};

std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path);
DatasetManifest read_manifest(const std::filesystem::path& dataset_path);

// Training prompts are re-rendered as plain translation requests: the English
// anchor is a synthesis-time device and never appears in emitted data. The
// template is drawn per example_id from the registry's direct variants.
struct DpoRecord {
  std::vector<Message> prompt_messages;
  std::string chosen;
  std::string rejected;

  bool operator==(const DpoRecord&) const = default;
};

struct SftRecord {
  std::vector<Message> prompt_messages;
  std::string target;

  bool operator==(const SftRecord&) const = default;
};

struct RmPairRecord {
  std::string english_source;
  std::string chosen;
  std::string rejected;
  LanguageTag tgt_lang;
  double chosen_score = 0.0;
  double rejected_score = 0.0;

  bool operator==(const RmPairRecord&) const = default;
};

// Pure record builders (the emit_* functions write exactly these).
std::vector<DpoRecord> dpo_records(const std::vector<PreferencePair>& pairs,
                                   const TemplateRegistry& registry, std::uint64_t seed);
std::vector<SftRecord> sft_chosen_records(const std::vector<PreferencePair>& pairs,
                                          const TemplateRegistry& registry,
                                          std::uint64_t seed);
std::vector<RmPairRecord> rm_pair_records(const std::vector<PreferencePair>& pairs);

struct EmitOptions {
  std::uint64_t seed = 0;
  std::string config_digest;
  FilterStats retention;   // stats from the producing build, recorded only
  std::string scorer_id;
};

DatasetManifest emit_dpo(const std::vector<PreferencePair>& pairs,
                         const TemplateRegistry& registry,
                         const std::filesystem::path& path, const EmitOptions& options);
DatasetManifest emit_sft_chosen(const std::vector<PreferencePair>& pairs,
                                const TemplateRegistry& registry,
                                const std::filesystem::path& path,
                                const EmitOptions& options);
// Requires every pair to come from an en->x build (rm dataset); refuses x2x
// preference data, which has no English source field to emit.
DatasetManifest emit_rm_pairs(const std::vector<PreferencePair>& pairs,
                              const std::filesystem::path& path,
                              const EmitOptions& options);

// Schema-validating read-backs for round-trip checks.
std::vector<DpoRecord> read_dpo(const std::filesystem::path& path);
std::vector<SftRecord> read_sft_chosen(const std::filesystem::path& path);
std::vector<RmPairRecord> read_rm_pairs(const std::filesystem::path& path);

}  // namespace x2x
