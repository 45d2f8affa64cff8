#include "x2x/emit.hpp"

#include <nlohmann/json.hpp>

#include "x2x/rng.hpp"

namespace x2x {

std::string emit_format_name(EmitFormat format) {
  switch (format) {
    case EmitFormat::dpo: return "dpo";
    case EmitFormat::sft_chosen: return "sft-chosen";
    case EmitFormat::rm_pairs: return "rm-pairs";
  }
  throw Error("unknown emit format");
}

EmitFormat parse_emit_format(std::string_view name) {
  if (name == "dpo") return EmitFormat::dpo;
  if (name == "sft-chosen") return EmitFormat::sft_chosen;
  if (name == "rm-pairs") return EmitFormat::rm_pairs;
  throw Error("unknown emit format '" + std::string(name) + "'");
}

Json recommended_training_defaults() {
  const Json common{{"train_epochs", 1},
                    {"lr_decay", "cosine"},
                    {"warmup_ratio", 0.1},
                    {"optimizer", "adamw"},
                    {"weight_decay", 0},
                    {"adam_beta1", 0.9},
                    {"adam_beta2", 0.999},
                    {"adam_epsilon", 0},
                    {"max_seq_len", 2048}};
  auto stage = [&common](int batch, double lr) {
    Json out = common;
    out["global_batch_size"] = batch;
    out["learning_rate"] = lr;
    return out;
  };
  Json dpo = stage(64, 2e-7);
  dpo["dpo_beta"] = 0.4;
  dpo["dpo_beta_llama"] = 0.2;
  dpo["sft_loss_coefficient"] = 2.0;
  return Json{{"sft_en2x", stage(128, 7e-6)},
              {"sft_flores", stage(128, 1e-6)},
              {"sft_chosen", stage(128, 4e-6)},
              {"dpo", dpo},
              {"rm", stage(64, 4e-6)}};
}

Json DatasetManifest::to_json() const {
  Json counts = Json::object();
  for (const auto& [label, value] : counts_per_direction) counts[label] = value;
  return Json{{"dataset", dataset},
              {"format", format},
              {"config_digest", config_digest},
              {"seed", seed},
              {"count", count},
              {"counts_per_direction", counts},
              {"filter_input", filter_input},
              {"filter_kept", filter_kept},
              {"retention", retention},
              {"scorer_id", scorer_id},
              {"templates", templates},
              {"training_defaults", training_defaults}};
}

DatasetManifest DatasetManifest::from_json(const Json& doc) {
  DatasetManifest manifest;
  manifest.dataset = doc.at("dataset").get<std::string>();
  manifest.format = doc.at("format").get<std::string>();
  manifest.config_digest = doc.at("config_digest").get<std::string>();
  manifest.seed = doc.at("seed").get<std::uint64_t>();
  manifest.count = doc.at("count").get<std::size_t>();
  for (const auto& [label, value] : doc.at("counts_per_direction").items())
    manifest.counts_per_direction[label] = value.get<std::size_t>();
  manifest.filter_input = doc.at("filter_input").get<std::size_t>();
  manifest.filter_kept = doc.at("filter_kept").get<std::size_t>();
  manifest.retention = doc.at("retention").get<double>();
  manifest.scorer_id = doc.at("scorer_id").get<std::string>();
  manifest.templates = doc.at("templates").get<std::vector<std::string>>();
  manifest.training_defaults = doc.at("training_defaults");
  return manifest;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& dataset_path) {
  auto path = dataset_path;
  path += ".manifest.json";
  return path;
}

DatasetManifest read_manifest(const std::filesystem::path& dataset_path) {
  const auto path = manifest_path_for(dataset_path);
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  Json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest " + path.string() + ": " + e.what());
  }
  return DatasetManifest::from_json(doc);
}

namespace {

std::vector<Message> training_prompt(const PreferencePair& pair,
                                     const TemplateRegistry& registry,
                                     std::uint64_t seed) {
  if (pair.source_text.empty())
    throw Error("cannot re-render prompt for '" + pair.example_id +
                "': empty source text");
  const auto& tpl = registry.pick(TemplateKind::direct, seed, pair.example_id);
  try {
    return render_direct(tpl, pair.direction.src, pair.direction.tgt, pair.source_text)
        .messages;
  } catch (const Error& e) {
    throw Error("cannot re-render prompt for '" + pair.example_id + "': " + e.what());
  }
}

Json messages_to_json(const std::vector<Message>& messages) {
  Json out = Json::array();
  for (const auto& message : messages)
    out.push_back(Json{{"role", role_name(message.role)}, {"text", message.text}});
  return out;
}

std::vector<Message> messages_from_json(const Json& doc) {
  std::vector<Message> out;
  for (const auto& entry : doc)
    out.push_back(Message{parse_role(entry.at("role").get<std::string>()),
                          entry.at("text").get<std::string>()});
  return out;
}

DatasetManifest write_dataset(const std::vector<Json>& lines,
                              const std::vector<PreferencePair>& pairs,
                              EmitFormat format, const std::filesystem::path& path,
                              const EmitOptions& options,
                              const std::vector<std::string>& templates) {
  atomic_write_jsonl(path, lines);

  DatasetManifest manifest;
  manifest.dataset = path.filename().string();
  manifest.format = emit_format_name(format);
  manifest.config_digest = options.config_digest;
  manifest.seed = options.seed;
  manifest.count = lines.size();
  for (const auto& pair : pairs) ++manifest.counts_per_direction[pair.direction.label()];
  manifest.filter_input = options.retention.input;
  manifest.filter_kept = options.retention.kept;
  manifest.retention = options.retention.retention();
  manifest.scorer_id = options.scorer_id;
  manifest.templates = templates;
  manifest.training_defaults = recommended_training_defaults();
  atomic_write_file(manifest_path_for(path), manifest.to_json().dump(2) + "\n");
  return manifest;
}

std::vector<std::string> template_names(const TemplateRegistry& registry,
                                        TemplateKind kind) {
  std::vector<std::string> names;
  for (const auto* tpl : registry.by_kind(kind)) names.push_back(tpl->name());
  return names;
}

}  // namespace

std::vector<DpoRecord> dpo_records(const std::vector<PreferencePair>& pairs,
                                   const TemplateRegistry& registry,
                                   std::uint64_t seed) {
  std::vector<DpoRecord> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs)
    records.push_back(
        DpoRecord{training_prompt(pair, registry, seed), pair.chosen_text,
                  pair.rejected_text});
  return records;
}

std::vector<SftRecord> sft_chosen_records(const std::vector<PreferencePair>& pairs,
                                          const TemplateRegistry& registry,
                                          std::uint64_t seed) {
  std::vector<SftRecord> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs)
    records.push_back(SftRecord{training_prompt(pair, registry, seed), pair.chosen_text});
  return records;
}

std::vector<RmPairRecord> rm_pair_records(const std::vector<PreferencePair>& pairs) {
  std::vector<RmPairRecord> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs) {
    if (!pair.direction.src.is_english())
      throw Error("rm-pairs requires an en->x dataset; pair '" + pair.example_id +
                  "' has source " + pair.direction.src.code);
    records.push_back(RmPairRecord{pair.english_text, pair.chosen_text,
                                   pair.rejected_text, pair.direction.tgt,
                                   pair.chosen_score, pair.rejected_score});
  }
  return records;
}

DatasetManifest emit_dpo(const std::vector<PreferencePair>& pairs,
                         const TemplateRegistry& registry,
                         const std::filesystem::path& path, const EmitOptions& options) {
  const auto records = dpo_records(pairs, registry, options.seed);
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& record : records)
    lines.push_back(Json{{"prompt_messages", messages_to_json(record.prompt_messages)},
                         {"chosen", record.chosen},
                         {"rejected", record.rejected}});
  return write_dataset(lines, pairs, EmitFormat::dpo, path, options,
                       template_names(registry, TemplateKind::direct));
}

DatasetManifest emit_sft_chosen(const std::vector<PreferencePair>& pairs,
                                const TemplateRegistry& registry,
                                const std::filesystem::path& path,
                                const EmitOptions& options) {
  const auto records = sft_chosen_records(pairs, registry, options.seed);
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& record : records)
    lines.push_back(Json{{"prompt_messages", messages_to_json(record.prompt_messages)},
                         {"target", record.target}});
  return write_dataset(lines, pairs, EmitFormat::sft_chosen, path, options,
                       template_names(registry, TemplateKind::direct));
}

DatasetManifest emit_rm_pairs(const std::vector<PreferencePair>& pairs,
                              const std::filesystem::path& path,
                              const EmitOptions& options) {
  const auto records = rm_pair_records(pairs);
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& record : records)
    lines.push_back(Json{{"english_source", record.english_source},
                         {"chosen", record.chosen},
                         {"rejected", record.rejected},
                         {"tgt_lang", record.tgt_lang.code},
                         {"chosen_score", record.chosen_score},
                         {"rejected_score", record.rejected_score}});
  return write_dataset(lines, pairs, EmitFormat::rm_pairs, path, options, {});
}

namespace {

template <typename Record, typename Parse>
std::vector<Record> read_records(const std::filesystem::path& path, Parse parse) {
  std::vector<Record> records;
  for_each_jsonl(path, [&](Json&& doc, std::size_t line_no) {
    try {
      records.push_back(parse(doc));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.filename().string() + " line " + std::to_string(line_no) +
                  ": " + e.what());
    }
  });
  return records;
}

}  // namespace

std::vector<DpoRecord> read_dpo(const std::filesystem::path& path) {
  return read_records<DpoRecord>(path, [](const Json& doc) {
    return DpoRecord{messages_from_json(doc.at("prompt_messages")),
                     doc.at("chosen").get<std::string>(),
                     doc.at("rejected").get<std::string>()};
  });
}

std::vector<SftRecord> read_sft_chosen(const std::filesystem::path& path) {
  return read_records<SftRecord>(path, [](const Json& doc) {
    return SftRecord{messages_from_json(doc.at("prompt_messages")),
                     doc.at("target").get<std::string>()};
  });
}

std::vector<RmPairRecord> read_rm_pairs(const std::filesystem::path& path) {
  return read_records<RmPairRecord>(path, [](const Json& doc) {
    return RmPairRecord{doc.at("english_source").get<std::string>(),
                        doc.at("chosen").get<std::string>(),
                        doc.at("rejected").get<std::string>(),
                        LanguageTag::parse(doc.at("tgt_lang").get<std::string>()),
                        doc.at("chosen_score").get<double>(),
                        doc.at("rejected_score").get<double>()};
  });
}

}  // namespace x2x
