#include "x2x/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "x2x/evalcmp.hpp"
#include "x2x/rng.hpp"

namespace x2x {
namespace {

bool valid_env_name(const std::string& name) {
  if (name.empty()) return false;
  if (!std::isalpha(static_cast<unsigned char>(name[0])) && name[0] != '_') return false;
  for (char c : name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
  return true;
}

std::string interpolate_string(const std::string& text, const std::string& where,
                               std::vector<std::string>& violations) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '$' && i + 1 < text.size() && text[i + 1] == '{') {
      const auto close = text.find('}', i + 2);
      if (close == std::string::npos) {
        violations.push_back(where + ": unterminated ${ reference");
        return text;
      }
      const std::string name = text.substr(i + 2, close - (i + 2));
      if (!valid_env_name(name)) {
        violations.push_back(where + ": invalid environment variable name '" + name + "'");
        return text;
      }
      const char* value = std::getenv(name.c_str());
      if (!value) {
        violations.push_back(where + ": environment variable '" + name + "' is not set");
        i = close + 1;
        continue;
      }
      out += value;
      i = close + 1;
      continue;
    }
    out += text[i++];
  }
  return out;
}

void interpolate_env(Json& node, const std::string& where,
                     std::vector<std::string>& violations) {
  if (node.is_string()) {
    node = interpolate_string(node.get<std::string>(), where, violations);
  } else if (node.is_object()) {
    for (auto& [key, value] : node.items())
      interpolate_env(value, where.empty() ? key : where + "." + key, violations);
  } else if (node.is_array()) {
    std::size_t index = 0;
    for (auto& value : node)
      interpolate_env(value, where + "[" + std::to_string(index++) + "]", violations);
  }
}

// Field access over one config object: records which keys were consumed so
// leftovers can be flagged, and turns type mismatches into violations instead
// of exceptions.
class ObjectReader {
 public:
  ObjectReader(const Json& obj, std::string path, std::vector<std::string>& violations)
      : obj_(obj), path_(std::move(path)), violations_(violations) {}

  const Json* field(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }

  std::optional<std::string> str(const std::string& key) {
    const Json* value = field(key);
    if (!value) return std::nullopt;
    if (!value->is_string()) {
      violation(key, "expected a string");
      return std::nullopt;
    }
    return value->get<std::string>();
  }

  std::optional<double> num(const std::string& key) {
    const Json* value = field(key);
    if (!value) return std::nullopt;
    if (!value->is_number()) {
      violation(key, "expected a number");
      return std::nullopt;
    }
    return value->get<double>();
  }

  std::optional<std::int64_t> integer(const std::string& key) {
    const Json* value = field(key);
    if (!value) return std::nullopt;
    if (!value->is_number_integer()) {
      violation(key, "expected an integer");
      return std::nullopt;
    }
    return value->get<std::int64_t>();
  }

  std::optional<std::uint64_t> uinteger(const std::string& key) {
    const Json* value = field(key);
    if (!value) return std::nullopt;
    if (!value->is_number_unsigned() &&
        !(value->is_number_integer() && value->get<std::int64_t>() >= 0)) {
      violation(key, "expected a non-negative integer");
      return std::nullopt;
    }
    return value->get<std::uint64_t>();
  }

  std::optional<bool> flag(const std::string& key) {
    const Json* value = field(key);
    if (!value) return std::nullopt;
    if (!value->is_boolean()) {
      violation(key, "expected a boolean");
      return std::nullopt;
    }
    return value->get<bool>();
  }

  void violation(const std::string& key, const std::string& message) {
    violations_.push_back(scoped(key) + ": " + message);
  }

  std::string scoped(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void reject_unknown_keys() {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.count(key))
        violations_.push_back((path_.empty() ? std::string("config")
                                             : path_) +
                              ": unknown key '" + key + "'");
  }

 private:
  const Json& obj_;
  std::string path_;
  std::vector<std::string>& violations_;
  std::set<std::string> seen_;
};

// Returns the child object for `key`, or nullptr when absent or mistyped.
const Json* child_object(ObjectReader& reader, const std::string& key) {
  const Json* value = reader.field(key);
  if (!value) return nullptr;
  if (!value->is_object()) {
    reader.violation(key, "expected an object");
    return nullptr;
  }
  return value;
}

void parse_retry(ObjectReader& parent, const std::string& key, RetryPolicy& retry,
                 std::vector<std::string>& violations) {
  const Json* obj = child_object(parent, key);
  if (!obj) return;
  ObjectReader reader(*obj, parent.scoped(key), violations);
  if (auto v = reader.integer("max_attempts")) retry.max_attempts = static_cast<int>(*v);
  if (auto v = reader.integer("backoff_ms")) retry.backoff_ms = static_cast<int>(*v);
  reader.reject_unknown_keys();
}

void parse_sampling_params(const Json& obj, const std::string& path,
                           SamplingParams& params, std::vector<std::string>& violations) {
  ObjectReader reader(obj, path, violations);
  if (auto v = reader.num("temperature")) params.temperature = *v;
  if (auto v = reader.num("top_p")) params.top_p = *v;
  if (auto v = reader.integer("num_samples")) params.num_samples = static_cast<int>(*v);
  reader.reject_unknown_keys();
  try {
    params.validate();
  } catch (const Error& error) {
    violations.push_back(path + ": " + error.what());
  }
}

void parse_filter_policy(const Json& obj, const std::string& path, FilterPolicy& policy,
                         std::vector<std::string>& violations) {
  // A present section replaces the default policy wholesale; merging two
  // policies would fight the exactly-one-driver rule.
  policy = FilterPolicy{};
  ObjectReader reader(obj, path, violations);
  if (auto v = reader.num("min_margin")) policy.min_margin = *v;
  if (auto v = reader.num("target_retention")) policy.target_retention = *v;
  if (auto v = reader.num("min_chosen_score")) policy.min_chosen_score = *v;
  if (auto v = reader.flag("per_direction")) policy.per_direction = *v;
  reader.reject_unknown_keys();
  try {
    policy.validate();
  } catch (const Error& error) {
    violations.push_back(path + ": " + error.what());
  }
}

std::optional<BackendKind> parse_backend_kind(const std::string& name) {
  if (name == "mock") return BackendKind::mock;
  if (name == "http") return BackendKind::http_chat;
  if (name == "subprocess") return BackendKind::subprocess;
  return std::nullopt;
}

std::string backend_kind_name(BackendKind kind) {
  switch (kind) {
    case BackendKind::mock: return "mock";
    case BackendKind::http_chat: return "http";
    case BackendKind::subprocess: return "subprocess";
  }
  throw Error("unreachable backend kind");
}

void parse_mock_config(ObjectReader& parent, MockConfig& mock,
                       std::vector<std::string>& violations) {
  const Json* obj = child_object(parent, "mock");
  if (!obj) return;
  ObjectReader reader(*obj, parent.scoped("mock"), violations);
  if (auto v = reader.num("quality_direct")) mock.quality_direct = *v;
  if (auto v = reader.num("quality_pivot")) mock.quality_pivot = *v;
  if (auto v = reader.num("quality_eaxt")) mock.quality_eaxt = *v;
  if (auto v = reader.num("noise_sigma")) mock.noise_sigma = *v;
  if (auto v = reader.num("sample_decay")) mock.sample_decay = *v;
  if (auto v = reader.num("corruption_strength")) mock.corruption_strength = *v;
  if (auto v = reader.integer("latency_max_ms")) mock.latency_max_ms = static_cast<int>(*v);
  if (auto v = reader.num("failure_rate")) mock.failure_rate = *v;
  reader.reject_unknown_keys();
}

void parse_backend(const Json& obj, const std::string& path, BackendDescriptor& backend,
                   std::vector<std::string>& violations) {
  ObjectReader reader(obj, path, violations);
  if (auto v = reader.str("kind")) {
    if (auto kind = parse_backend_kind(*v))
      backend.kind = *kind;
    else
      reader.violation("kind", "must be one of mock | http | subprocess");
  }
  if (auto v = reader.str("endpoint")) backend.endpoint = *v;
  if (auto v = reader.str("model")) backend.model = *v;
  if (auto v = reader.str("command")) backend.command = *v;
  if (auto v = reader.str("auth_env")) backend.auth_env = *v;
  if (auto v = reader.integer("timeout_ms")) backend.timeout_ms = static_cast<int>(*v);
  if (auto v = reader.integer("max_in_flight")) backend.max_in_flight = static_cast<int>(*v);
  parse_retry(reader, "retry", backend.retry, violations);
  if (auto v = reader.flag("supports_n")) backend.supports_n = *v;
  if (auto v = reader.flag("send_seed")) backend.send_seed = *v;
  parse_mock_config(reader, backend.mock, violations);
  reader.reject_unknown_keys();
  try {
    backend.validate();
  } catch (const Error& error) {
    violations.push_back(path + ": " + std::string(error.what()));
  }
}

void parse_scorer(const Json& obj, const std::string& path, ScorerConfig& scorer,
                  std::vector<std::string>& violations) {
  ObjectReader reader(obj, path, violations);
  if (auto v = reader.str("kind")) {
    if (auto kind = parse_scorer_kind(*v))
      scorer.kind = *kind;
    else
      reader.violation("kind",
                       "must be one of surrogate | marker | judge | http | subprocess");
  }
  if (auto v = reader.str("endpoint")) scorer.endpoint.endpoint = *v;
  if (auto v = reader.str("command")) scorer.endpoint.command = *v;
  if (auto v = reader.str("auth_env")) scorer.endpoint.auth_env = *v;
  if (auto v = reader.integer("timeout_ms"))
    scorer.endpoint.timeout_ms = static_cast<int>(*v);
  if (auto v = reader.integer("max_in_flight"))
    scorer.endpoint.max_in_flight = static_cast<int>(*v);
  parse_retry(reader, "retry", scorer.endpoint.retry, violations);
  if (const Json* scale = child_object(reader, "scale")) {
    ObjectReader scale_reader(*scale, path + ".scale", violations);
    if (auto v = scale_reader.num("lo")) scorer.endpoint.scale.lo = *v;
    if (auto v = scale_reader.num("hi")) scorer.endpoint.scale.hi = *v;
    scale_reader.reject_unknown_keys();
  }
  reader.reject_unknown_keys();

  if (scorer.kind == ScorerKind::http && scorer.endpoint.endpoint.empty())
    violations.push_back(path + ": http scorer needs an endpoint");
  if (scorer.kind == ScorerKind::subprocess && scorer.endpoint.command.empty())
    violations.push_back(path + ": subprocess scorer needs a command");
  if (!(scorer.endpoint.scale.lo < scorer.endpoint.scale.hi))
    violations.push_back(path + ".scale: lo must be below hi");
  if (scorer.endpoint.timeout_ms < 1)
    violations.push_back(path + ": timeout_ms must be >= 1");
  if (scorer.endpoint.max_in_flight < 1)
    violations.push_back(path + ": max_in_flight must be >= 1");
}

std::filesystem::path resolve_path(const std::filesystem::path& base_dir,
                                   const std::filesystem::path& path) {
  if (base_dir.empty() || path.is_absolute()) return path;
  return base_dir / path;
}

Json retry_to_json(const RetryPolicy& retry) {
  return Json{{"max_attempts", retry.max_attempts}, {"backoff_ms", retry.backoff_ms}};
}

Json params_to_json(const SamplingParams& params) {
  return Json{{"temperature", params.temperature},
              {"top_p", params.top_p},
              {"num_samples", params.num_samples}};
}

Json policy_to_json(const FilterPolicy& policy) {
  Json doc{{"per_direction", policy.per_direction}};
  doc["min_margin"] = policy.min_margin ? Json(*policy.min_margin) : Json(nullptr);
  doc["target_retention"] =
      policy.target_retention ? Json(*policy.target_retention) : Json(nullptr);
  doc["min_chosen_score"] =
      policy.min_chosen_score ? Json(*policy.min_chosen_score) : Json(nullptr);
  return doc;
}

Json backend_to_json(const BackendDescriptor& backend) {
  Json doc{{"kind", backend_kind_name(backend.kind)},
           {"endpoint", backend.endpoint},
           {"model", backend.model},
           {"command", backend.command},
           {"auth_env", backend.auth_env},
           {"timeout_ms", backend.timeout_ms},
           {"max_in_flight", backend.max_in_flight},
           {"retry", retry_to_json(backend.retry)},
           {"supports_n", backend.supports_n},
           {"send_seed", backend.send_seed}};
  doc["mock"] = Json{{"quality_direct", backend.mock.quality_direct},
                     {"quality_pivot", backend.mock.quality_pivot},
                     {"quality_eaxt", backend.mock.quality_eaxt},
                     {"noise_sigma", backend.mock.noise_sigma},
                     {"sample_decay", backend.mock.sample_decay},
                     {"corruption_strength", backend.mock.corruption_strength},
                     {"latency_max_ms", backend.mock.latency_max_ms},
                     {"failure_rate", backend.mock.failure_rate}};
  return doc;
}

std::uint64_t scorer_seed(const PipelineConfig& config) {
  return mix_seed(config.seed, {fnv1a64("judge-scorer")});
}

std::string candidate_key(const Candidate& candidate) {
  return candidate.task.example_id + "\x1f" + candidate.task.src.code + "\x1f" +
         candidate.task.tgt.code + "\x1f" + std::to_string(candidate.sample_index);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : Error([&violations] {
        std::string what = "invalid configuration:";
        for (const auto& violation : violations) what += "\n  - " + violation;
        return what;
      }()),
      violations_(std::move(violations)) {}

std::string scorer_kind_name(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::surrogate: return "surrogate";
    case ScorerKind::marker: return "marker";
    case ScorerKind::judge: return "judge";
    case ScorerKind::http: return "http";
    case ScorerKind::subprocess: return "subprocess";
  }
  throw Error("unreachable scorer kind");
}

std::optional<ScorerKind> parse_scorer_kind(const std::string& name) {
  if (name == "surrogate") return ScorerKind::surrogate;
  if (name == "marker") return ScorerKind::marker;
  if (name == "judge") return ScorerKind::judge;
  if (name == "http") return ScorerKind::http;
  if (name == "subprocess") return ScorerKind::subprocess;
  return std::nullopt;
}

Json ScorerConfig::to_json() const {
  return Json{{"kind", scorer_kind_name(kind)},
              {"endpoint", endpoint.endpoint},
              {"command", endpoint.command},
              {"auth_env", endpoint.auth_env},
              {"timeout_ms", endpoint.timeout_ms},
              {"max_in_flight", endpoint.max_in_flight},
              {"retry", retry_to_json(endpoint.retry)},
              {"scale", Json{{"lo", endpoint.scale.lo}, {"hi", endpoint.scale.hi}}}};
}

Json CorpusConfig::to_json() const {
  Json doc{{"path", path.string()},
           {"format", format == CorpusFormat::jsonl ? "jsonl" : "tsv"},
           {"max_reject_fraction", max_reject_fraction},
           {"max_length", max_length}};
  doc["source_lang"] = source_lang ? Json(source_lang->code) : Json(nullptr);
  return doc;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file " + path.string()});
  Json doc = Json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded())
    throw ConfigError({"config file " + path.string() + " is not valid JSON"});
  return from_json(doc, path.parent_path());
}

PipelineConfig PipelineConfig::from_json(const Json& raw,
                                         const std::filesystem::path& base_dir) {
  std::vector<std::string> violations;
  if (!raw.is_object()) throw ConfigError({"config root must be a JSON object"});

  Json doc = raw;
  interpolate_env(doc, "", violations);

  PipelineConfig config;
  ObjectReader reader(doc, "", violations);

  if (auto v = reader.str("run_dir")) {
    if (v->empty())
      reader.violation("run_dir", "must not be empty");
    else
      config.run_dir = resolve_path(base_dir, *v);
  } else if (!reader.field("run_dir")) {
    violations.push_back("run_dir: required");
  }

  if (auto v = reader.uinteger("seed")) config.seed = *v;

  if (const Json* langs = reader.field("languages")) {
    if (!langs->is_array() || langs->empty()) {
      reader.violation("languages", "expected a non-empty array of language tags");
    } else {
      std::set<std::string> dedup;
      for (const auto& entry : *langs) {
        if (!entry.is_string()) {
          reader.violation("languages", "entries must be strings");
          continue;
        }
        try {
          auto tag = LanguageTag::parse(entry.get<std::string>());
          if (!dedup.insert(tag.code).second) {
            reader.violation("languages", "duplicate tag '" + tag.code + "'");
            continue;
          }
          config.languages.push_back(tag);
        } catch (const Error& error) {
          reader.violation("languages", error.what());
        }
      }
      const bool any_non_english =
          std::any_of(config.languages.begin(), config.languages.end(),
                      [](const LanguageTag& tag) { return !tag.is_english(); });
      if (!any_non_english)
        reader.violation("languages", "needs at least one non-English tag");
    }
  } else {
    violations.push_back("languages: required");
  }

  if (const Json* corpus = child_object(reader, "corpus")) {
    ObjectReader corpus_reader(*corpus, "corpus", violations);
    if (auto v = corpus_reader.str("path")) {
      if (v->empty())
        corpus_reader.violation("path", "must not be empty");
      else
        config.corpus.path = resolve_path(base_dir, *v);
    } else if (!corpus_reader.field("path")) {
      violations.push_back("corpus.path: required");
    }
    if (auto v = corpus_reader.str("format")) {
      if (*v == "jsonl")
        config.corpus.format = CorpusFormat::jsonl;
      else if (*v == "tsv")
        config.corpus.format = CorpusFormat::tsv;
      else
        corpus_reader.violation("format", "must be jsonl or tsv");
    }
    if (auto v = corpus_reader.str("source_lang")) {
      try {
        auto tag = LanguageTag::parse(*v);
        if (tag.is_english())
          corpus_reader.violation("source_lang", "must not be en");
        else
          config.corpus.source_lang = tag;
      } catch (const Error& error) {
        corpus_reader.violation("source_lang", error.what());
      }
    }
    if (auto v = corpus_reader.num("max_reject_fraction")) {
      if (*v < 0.0 || *v > 1.0)
        corpus_reader.violation("max_reject_fraction", "must be within [0, 1]");
      else
        config.corpus.max_reject_fraction = *v;
    }
    if (auto v = corpus_reader.uinteger("max_length"))
      config.corpus.max_length = static_cast<std::size_t>(*v);
    corpus_reader.reject_unknown_keys();
    if (config.corpus.format == CorpusFormat::tsv && !config.corpus.source_lang)
      violations.push_back("corpus.source_lang: required for tsv input");
  } else {
    violations.push_back("corpus: required");
  }

  if (const Json* backend = child_object(reader, "backend"))
    parse_backend(*backend, "backend", config.backend, violations);
  if (const Json* scorer = child_object(reader, "scorer"))
    parse_scorer(*scorer, "scorer", config.scorer, violations);
  if (const Json* metric = child_object(reader, "metric"))
    parse_scorer(*metric, "metric", config.metric, violations);

  if (const Json* sampling = child_object(reader, "sampling")) {
    ObjectReader sampling_reader(*sampling, "sampling", violations);
    if (const Json* x2x = child_object(sampling_reader, "x2x"))
      parse_sampling_params(*x2x, "sampling.x2x", config.x2x_params, violations);
    if (const Json* rm = child_object(sampling_reader, "rm"))
      parse_sampling_params(*rm, "sampling.rm", config.rm_params, violations);
    sampling_reader.reject_unknown_keys();
  }

  if (const Json* filter = child_object(reader, "filter")) {
    ObjectReader filter_reader(*filter, "filter", violations);
    if (const Json* x2x = child_object(filter_reader, "x2x"))
      parse_filter_policy(*x2x, "filter.x2x", config.x2x_policy, violations);
    if (const Json* rm = child_object(filter_reader, "rm"))
      parse_filter_policy(*rm, "filter.rm", config.rm_policy, violations);
    filter_reader.reject_unknown_keys();
  }

  if (const Json* synthesis = child_object(reader, "synthesis")) {
    ObjectReader synth_reader(*synthesis, "synthesis", violations);
    if (auto v = synth_reader.flag("two_stage_pivot")) config.two_stage_pivot = *v;
    if (auto v = synth_reader.integer("batch_size")) {
      if (*v < 1)
        synth_reader.violation("batch_size", "must be >= 1");
      else
        config.batch_size = static_cast<std::size_t>(*v);
    }
    if (auto v = synth_reader.num("failure_tolerance")) {
      if (*v < 0.0 || *v > 1.0)
        synth_reader.violation("failure_tolerance", "must be within [0, 1]");
      else
        config.failure_tolerance = *v;
    }
    synth_reader.reject_unknown_keys();
  }

  if (const Json* templates = reader.field("templates")) {
    if (!templates->is_array()) {
      reader.violation("templates", "expected an array of file paths");
    } else {
      for (const auto& entry : *templates) {
        if (!entry.is_string()) {
          reader.violation("templates", "entries must be strings");
          continue;
        }
        config.template_files.push_back(resolve_path(base_dir, entry.get<std::string>()));
      }
    }
  }

  if (const Json* compare = child_object(reader, "compare")) {
    ObjectReader compare_reader(*compare, "compare", violations);
    if (auto v = compare_reader.str("mode")) {
      try {
        config.compare_mode = parse_score_mode(*v);
      } catch (const Error& error) {
        compare_reader.violation("mode", error.what());
      }
    }
    if (auto v = compare_reader.flag("first_only")) config.first_only = *v;
    compare_reader.reject_unknown_keys();
  }

  reader.reject_unknown_keys();
  if (!violations.empty()) throw ConfigError(std::move(violations));
  return config;
}

Json PipelineConfig::to_json() const {
  // run_dir is deliberately excluded: it names where outputs land, not what
  // they are, so relocating a run keeps its digest.
  Json doc;
  doc["seed"] = seed;
  Json langs = Json::array();
  for (const auto& tag : languages) langs.push_back(tag.code);
  doc["languages"] = std::move(langs);
  doc["corpus"] = corpus.to_json();
  doc["backend"] = backend_to_json(backend);
  doc["scorer"] = scorer.to_json();
  doc["metric"] = metric.to_json();
  doc["sampling"] = Json{{"x2x", params_to_json(x2x_params)}, {"rm", params_to_json(rm_params)}};
  doc["filter"] = Json{{"x2x", policy_to_json(x2x_policy)}, {"rm", policy_to_json(rm_policy)}};
  doc["synthesis"] = Json{{"two_stage_pivot", two_stage_pivot},
                          {"batch_size", batch_size},
                          {"failure_tolerance", failure_tolerance}};
  Json template_list = Json::array();
  for (const auto& file : template_files) template_list.push_back(file.string());
  doc["templates"] = std::move(template_list);
  doc["compare"] =
      Json{{"mode", score_mode_name(compare_mode)}, {"first_only", first_only}};
  return doc;
}

std::string PipelineConfig::digest() const {
  return to_hex(fnv1a64(to_jsonl_line(to_json())));
}

RunLock::RunLock(const std::filesystem::path& run_dir) {
  std::filesystem::create_directories(run_dir);
  lock_path_ = run_dir / "run.lock";
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      if (::write(fd, pid.data(), pid.size()) < 0) {
        ::close(fd);
        throw EnvironmentError("cannot write lock file " + lock_path_.string() + ": " +
                               std::strerror(errno));
      }
      ::close(fd);
      held_ = true;
      return;
    }
    if (errno != EEXIST)
      throw EnvironmentError("cannot create lock file " + lock_path_.string() + ": " +
                             std::strerror(errno));

    long pid = 0;
    std::ifstream in(lock_path_);
    in >> pid;
    const bool alive =
        pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM);
    if (alive)
      throw EnvironmentError("run directory " + run_dir.string() +
                             " is locked by running process " + std::to_string(pid));
    // Stale lock from a dead process: take it over.
    std::error_code ec;
    std::filesystem::remove(lock_path_, ec);
  }
  throw EnvironmentError("cannot acquire lock " + lock_path_.string());
}

RunLock::~RunLock() {
  if (held_) {
    std::error_code ec;
    std::filesystem::remove(lock_path_, ec);
  }
}

TemplateRegistry load_templates(const PipelineConfig& config) {
  auto registry = TemplateRegistry::with_builtins();
  for (const auto& file : config.template_files) registry.load_file(file);
  return registry;
}

std::unique_ptr<Scorer> make_scorer(const ScorerConfig& config, Backend& backend,
                                    const TemplateRegistry& registry,
                                    std::uint64_t seed) {
  switch (config.kind) {
    case ScorerKind::surrogate: return std::make_unique<SurrogateMetricScorer>();
    case ScorerKind::marker: return std::make_unique<MarkerScorer>();
    case ScorerKind::judge:
      return std::make_unique<LlmJudgeScorer>(backend, registry, seed);
    case ScorerKind::http: return make_http_scorer(config.endpoint);
    case ScorerKind::subprocess: return make_subprocess_scorer(config.endpoint);
  }
  throw Error("unreachable scorer kind");
}

std::filesystem::path working_corpus_path(const PipelineConfig& config) {
  return config.run_dir / "corpus.jsonl";
}

std::filesystem::path rejects_path(const PipelineConfig& config) {
  return config.run_dir / "rejects.jsonl";
}

std::filesystem::path scores_path(const PipelineConfig& config, Strategy strategy,
                                  ScoreMode mode) {
  return config.run_dir / "scores" /
         (strategy_name(strategy) + "-" + score_mode_name(mode) + ".jsonl");
}

std::filesystem::path prefs_path(const PipelineConfig& config, Strategy strategy) {
  return config.run_dir / "prefs" / (strategy_name(strategy) + ".jsonl");
}

std::filesystem::path prefs_stats_path(const PipelineConfig& config, Strategy strategy) {
  return config.run_dir / "prefs" / (strategy_name(strategy) + ".stats.json");
}

std::filesystem::path rm_prefs_path(const PipelineConfig& config) {
  return config.run_dir / "prefs" / "rm.jsonl";
}

std::filesystem::path rm_prefs_stats_path(const PipelineConfig& config) {
  return config.run_dir / "prefs" / "rm.stats.json";
}

std::filesystem::path dataset_path(const PipelineConfig& config, EmitFormat format,
                                   Strategy strategy) {
  const std::string name = format == EmitFormat::rm_pairs
                               ? std::string("rm-pairs")
                               : emit_format_name(format) + "-" + strategy_name(strategy);
  return config.run_dir / "datasets" / (name + ".jsonl");
}

std::filesystem::path compare_report_path(const PipelineConfig& config) {
  return config.run_dir / "reports" / "compare.json";
}

Corpus load_working_corpus(const PipelineConfig& config) {
  const auto path = working_corpus_path(config);
  if (!std::filesystem::exists(path))
    throw Error("no ingested corpus at " + path.string() + " (run `ingest` first)");
  IngestOptions options;
  options.format = CorpusFormat::jsonl;
  options.max_reject_fraction = 0.0;  // our own output must be pristine
  return ingest(path, options).corpus;
}

int stage_ingest(const PipelineConfig& config) {
  IngestOptions options;
  options.format = config.corpus.format;
  options.source_lang = config.corpus.source_lang;
  options.max_reject_fraction = config.corpus.max_reject_fraction;
  options.max_length = config.corpus.max_length;

  auto result = ingest(config.corpus.path, options);
  write_corpus_jsonl(result.corpus, working_corpus_path(config));
  if (result.rejects.empty()) {
    std::error_code ec;
    std::filesystem::remove(rejects_path(config), ec);
  } else {
    write_rejects_report(result.rejects, rejects_path(config));
  }

  std::string langs;
  for (const auto& tag : result.corpus.source_languages())
    langs += (langs.empty() ? "" : " ") + tag.code;
  std::cout << "ingested " << result.corpus.size() << " examples from "
            << config.corpus.path.string() << " (" << result.rejects.size()
            << " rejected)\n"
            << "source languages: " << langs << "\n"
            << "working corpus: " << working_corpus_path(config).string() << "\n";
  return 0;
}

int stage_plan(const PipelineConfig& config, const std::vector<Strategy>& strategies) {
  const auto corpus = load_working_corpus(config);
  for (const auto strategy : strategies) {
    const auto plan = plan_expansion(corpus, config.languages, strategy);
    std::set<std::string> directions;
    for (const auto& task : plan.tasks)
      directions.insert(Direction{task.src, task.tgt}.label());
    std::cout << strategy_name(strategy) << ": " << plan.tasks.size() << " tasks across "
              << directions.size() << " directions (" << plan.rejected.size()
              << " examples skipped)\n";
  }
  return 0;
}

int stage_synthesize(const PipelineConfig& config, Strategy strategy) {
  const auto corpus = load_working_corpus(config);
  const auto registry = load_templates(config);
  const auto backend = make_backend(config.backend, registry);

  const auto plan = plan_expansion(corpus, config.languages, strategy);
  if (!plan.rejected.empty()) {
    std::vector<Json> records;
    records.reserve(plan.rejected.size());
    for (const auto& rejected : plan.rejected)
      records.push_back(Json{{"example_id", rejected.example_id},
                             {"tgt", rejected.tgt.code},
                             {"reason", rejected.reason}});
    atomic_write_jsonl(
        config.run_dir / "failures" / (strategy_name(strategy) + "-planning.jsonl"),
        records);
  }

  SynthOptions options;
  options.run_dir = config.run_dir;
  options.seed = config.seed;
  options.params = config.x2x_params;
  options.two_stage_pivot = config.two_stage_pivot;
  options.batch_size = config.batch_size;

  const auto summary = synthesize(corpus, plan, strategy, *backend, registry, options);
  std::cout << strategy_name(strategy) << ": planned " << summary.planned << ", resumed "
            << summary.resumed << ", completed " << summary.completed << ", failed "
            << summary.failed << " (" << summary.candidates << " candidates)\n";

  if (summary.failure_rate() > config.failure_tolerance) {
    std::cout << "failure rate " << summary.failure_rate() << " exceeds tolerance "
              << config.failure_tolerance << "\n";
    return 2;
  }
  return 0;
}

int stage_score(const PipelineConfig& config, Strategy strategy, ScoreMode mode) {
  const auto corpus = load_working_corpus(config);
  const auto candidates = read_candidates(config.run_dir, strategy);
  if (candidates.empty())
    throw Error("no candidates for strategy '" + strategy_name(strategy) +
                "' (run `synthesize` first)");

  const auto registry = load_templates(config);
  const auto backend = make_backend(config.backend, registry);
  const auto scorer = make_scorer(config.scorer, *backend, registry, scorer_seed(config));
  const auto scored = score_candidates(corpus, candidates, *scorer, mode);

  std::vector<Json> records;
  records.reserve(scored.size());
  Aggregate aggregate;
  std::size_t unscored = 0;
  for (const auto& entry : scored) {
    Json record{{"example_id", entry.candidate.task.example_id},
                {"src", entry.candidate.task.src.code},
                {"tgt", entry.candidate.task.tgt.code},
                {"strategy", strategy_name(entry.candidate.task.strategy)},
                {"sample_index", entry.candidate.sample_index},
                {"scorer", entry.scorer_id},
                {"mode", score_mode_name(entry.mode)}};
    record["score"] = entry.score ? Json(*entry.score) : Json(nullptr);
    if (entry.out_of_range) record["out_of_range"] = true;
    if (!entry.error.empty()) record["error"] = entry.error;
    records.push_back(std::move(record));
    if (entry.score)
      aggregate.add(*entry.score);
    else
      ++unscored;
  }
  const auto path = scores_path(config, strategy, mode);
  atomic_write_jsonl(path, records);

  std::cout << "scored " << aggregate.count << " of " << scored.size() << " candidates ("
            << unscored << " unscored) under " << scorer->id() << "\n";
  if (aggregate.count > 0) std::cout << "mean score: " << aggregate.mean << "\n";
  std::cout << "score ledger: " << path.string() << "\n";
  return 0;
}

namespace {

std::vector<ScoredCandidate> join_scores(const std::vector<Candidate>& candidates,
                                         const std::filesystem::path& ledger,
                                         ScoreMode mode) {
  struct Entry {
    std::optional<double> score;
    std::string scorer_id;
    bool out_of_range = false;
    std::string error;
  };
  std::map<std::string, Entry> by_key;
  for_each_jsonl(ledger, [&](Json&& record, std::size_t) {
    Entry entry;
    if (record.contains("score") && record.at("score").is_number())
      entry.score = record.at("score").get<double>();
    entry.scorer_id = record.value("scorer", "");
    entry.out_of_range = record.value("out_of_range", false);
    entry.error = record.value("error", "");
    const std::string key = record.value("example_id", "") + "\x1f" +
                            record.value("src", "") + "\x1f" + record.value("tgt", "") +
                            "\x1f" + std::to_string(record.value("sample_index", 0));
    by_key[key] = std::move(entry);
  });

  std::vector<ScoredCandidate> scored;
  scored.reserve(candidates.size());
  for (const auto& candidate : candidates) {
    ScoredCandidate entry;
    entry.candidate = candidate;
    entry.mode = mode;
    const auto it = by_key.find(candidate_key(candidate));
    if (it == by_key.end()) {
      entry.error = "not present in score ledger";
    } else {
      entry.score = it->second.score;
      entry.scorer_id = it->second.scorer_id;
      entry.out_of_range = it->second.out_of_range;
      entry.error = it->second.error;
    }
    scored.push_back(std::move(entry));
  }
  return scored;
}

Json stats_to_json(const PrefsBuildResult& built, const std::string& scorer_id,
                   const std::string& label, const std::string& mode_name) {
  Json per_direction = Json::object();
  for (const auto& [direction, stats] : built.stats.per_direction)
    per_direction[direction] = Json{
        {"input", stats.input}, {"kept", stats.kept}, {"dropped", stats.dropped}};
  Json doc{{"dataset", label},
           {"mode", mode_name},
           {"input", built.stats.input},
           {"kept", built.stats.kept},
           {"dropped", built.stats.dropped},
           {"retention", built.stats.retention()},
           {"groups", built.groups},
           {"groups_without_pair", built.groups_without_pair},
           {"unscored_candidates", built.unscored_candidates},
           {"degenerate_candidates", built.degenerate_candidates},
           {"generation_failures", built.generation_failures},
           {"scorer_id", scorer_id},
           {"per_direction", std::move(per_direction)}};
  doc["zero_survivor_directions"] = built.zero_survivor_directions;
  return doc;
}

std::string scorer_id_of(const PrefsBuildResult& built) {
  if (!built.kept.empty()) return built.kept.front().scorer_id;
  if (!built.dropped.empty()) return built.dropped.front().scorer_id;
  return "";
}

void write_prefs_outputs(const PrefsBuildResult& built,
                         const std::filesystem::path& pairs_path,
                         const std::filesystem::path& stats_path,
                         const std::string& label, const std::string& mode_name) {
  write_preferences(built.kept, pairs_path);
  auto dropped_path = pairs_path;
  dropped_path.replace_extension(".dropped.jsonl");
  write_preferences(built.dropped, dropped_path);
  atomic_write_file(stats_path,
                    stats_to_json(built, scorer_id_of(built), label, mode_name).dump(2) +
                        "\n");

  std::cout << label << ": kept " << built.stats.kept << " of " << built.stats.input
            << " pairs (retention " << built.stats.retention() << ") from "
            << built.groups << " groups\n";
  if (built.unscored_candidates > 0)
    std::cout << "unscored candidates: " << built.unscored_candidates << "\n";
  if (!built.zero_survivor_directions.empty()) {
    std::cout << "directions with no surviving pair:";
    for (const auto& direction : built.zero_survivor_directions)
      std::cout << " " << direction;
    std::cout << "\n";
  }
  std::cout << "preference data: " << pairs_path.string() << "\n";
}

// Retention stats recorded by build-prefs / build-rm-data, for manifests.
struct RecordedStats {
  FilterStats stats;
  std::string scorer_id;
};

RecordedStats read_recorded_stats(const std::filesystem::path& path) {
  RecordedStats recorded;
  if (!std::filesystem::exists(path)) return recorded;
  std::ifstream in(path);
  Json doc = Json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) return recorded;
  recorded.stats.input = doc.value("input", std::size_t{0});
  recorded.stats.kept = doc.value("kept", std::size_t{0});
  recorded.stats.dropped = doc.value("dropped", std::size_t{0});
  recorded.scorer_id = doc.value("scorer_id", "");
  if (doc.contains("per_direction") && doc.at("per_direction").is_object()) {
    for (const auto& [direction, stats] : doc.at("per_direction").items()) {
      DirectionStats entry;
      entry.input = stats.value("input", std::size_t{0});
      entry.kept = stats.value("kept", std::size_t{0});
      entry.dropped = stats.value("dropped", std::size_t{0});
      recorded.stats.per_direction[direction] = entry;
    }
  }
  return recorded;
}

}  // namespace

int stage_build_prefs(const PipelineConfig& config, Strategy strategy, ScoreMode mode) {
  const auto corpus = load_working_corpus(config);
  const auto candidates = read_candidates(config.run_dir, strategy);
  if (candidates.empty())
    throw Error("no candidates for strategy '" + strategy_name(strategy) +
                "' (run `synthesize` first)");

  PrefsBuildResult built;
  const auto ledger = scores_path(config, strategy, mode);
  if (std::filesystem::exists(ledger)) {
    std::cout << "reusing score ledger " << ledger.string() << "\n";
    built = build_preferences_from_scored(corpus, join_scores(candidates, ledger, mode),
                                          config.x2x_policy);
  } else {
    const auto registry = load_templates(config);
    const auto backend = make_backend(config.backend, registry);
    const auto scorer =
        make_scorer(config.scorer, *backend, registry, scorer_seed(config));
    PrefsOptions options;
    options.policy = config.x2x_policy;
    options.mode = mode;
    built = build_x2x_preferences(corpus, candidates, *scorer, options);
  }

  write_prefs_outputs(built, prefs_path(config, strategy),
                      prefs_stats_path(config, strategy), strategy_name(strategy),
                      score_mode_name(mode));
  return 0;
}

int stage_build_rm(const PipelineConfig& config) {
  const auto corpus = load_working_corpus(config);
  const auto registry = load_templates(config);
  const auto backend = make_backend(config.backend, registry);
  const auto metric = make_scorer(config.metric, *backend, registry, scorer_seed(config));

  RmDataOptions options;
  options.seed = config.seed;
  options.params = config.rm_params;
  options.policy = config.rm_policy;
  options.batch_size = config.batch_size;

  const auto built = build_rm_dataset(corpus, *backend, registry, *metric, options);
  write_prefs_outputs(built, rm_prefs_path(config), rm_prefs_stats_path(config), "rm",
                      score_mode_name(ScoreMode::reference_metric));
  if (built.generation_failures > 0)
    std::cout << "generation failures: " << built.generation_failures << "\n";
  return 0;
}

int stage_emit(const PipelineConfig& config, EmitFormat format, Strategy strategy) {
  const bool rm = format == EmitFormat::rm_pairs;
  const auto pairs_file = rm ? rm_prefs_path(config) : prefs_path(config, strategy);
  if (!std::filesystem::exists(pairs_file))
    throw Error("no preference data at " + pairs_file.string() + " (run `" +
                (rm ? std::string("build-rm-data") : std::string("build-prefs")) +
                "` first)");
  const auto pairs = read_preferences(pairs_file);
  const auto recorded = read_recorded_stats(rm ? rm_prefs_stats_path(config)
                                               : prefs_stats_path(config, strategy));

  EmitOptions options;
  options.seed = config.seed;
  options.config_digest = config.digest();
  options.retention = recorded.stats;
  options.scorer_id = !recorded.scorer_id.empty()
                          ? recorded.scorer_id
                          : (pairs.empty() ? "" : pairs.front().scorer_id);

  const auto path = dataset_path(config, format, strategy);
  DatasetManifest manifest;
  switch (format) {
    case EmitFormat::dpo: {
      const auto registry = load_templates(config);
      manifest = emit_dpo(pairs, registry, path, options);
      break;
    }
    case EmitFormat::sft_chosen: {
      const auto registry = load_templates(config);
      manifest = emit_sft_chosen(pairs, registry, path, options);
      break;
    }
    case EmitFormat::rm_pairs:
      manifest = emit_rm_pairs(pairs, path, options);
      break;
  }

  std::cout << "emitted " << manifest.count << " " << emit_format_name(format)
            << " records to " << path.string() << "\n"
            << "manifest: " << manifest_path_for(path).string() << "\n";
  return 0;
}

int stage_compare(const PipelineConfig& config, const std::vector<Strategy>& strategies) {
  if (strategies.size() < 2)
    throw Error("compare needs at least two strategies");
  const auto corpus = load_working_corpus(config);
  const auto registry = load_templates(config);
  const auto backend = make_backend(config.backend, registry);
  const auto scorer = make_scorer(config.scorer, *backend, registry, scorer_seed(config));

  std::vector<std::pair<std::string, std::vector<Candidate>>> stores;
  for (const auto strategy : strategies) {
    auto candidates = read_candidates(config.run_dir, strategy);
    if (candidates.empty())
      throw Error("no candidates for strategy '" + strategy_name(strategy) +
                  "' (run `synthesize` first)");
    stores.emplace_back(strategy_name(strategy), std::move(candidates));
  }

  CompareOptions options;
  options.mode = config.compare_mode;
  options.first_only = config.first_only;
  const auto report = compare_strategies(corpus, stores, *scorer, options);

  const auto json_path = compare_report_path(config);
  auto csv_path = json_path;
  csv_path.replace_extension(".csv");
  atomic_write_file(json_path, report.to_json().dump(2) + "\n");
  atomic_write_file(csv_path, report.to_csv());

  std::cout << report.to_text();
  std::cout << "reports: " << json_path.string() << ", " << csv_path.string() << "\n";
  return 0;
}

int stage_stats(const PipelineConfig& config) {
  std::cout << "config digest: " << config.digest() << "\n"
            << "seed: " << config.seed << "\n";

  const auto corpus_file = working_corpus_path(config);
  if (std::filesystem::exists(corpus_file)) {
    const auto corpus = load_working_corpus(config);
    std::string langs;
    for (const auto& tag : corpus.source_languages())
      langs += (langs.empty() ? "" : " ") + tag.code;
    std::cout << "corpus: " << corpus.size() << " examples, source languages: " << langs
              << "\n";
  } else {
    std::cout << "corpus: not ingested\n";
  }

  auto langs = config.languages;
  if (std::none_of(langs.begin(), langs.end(),
                   [](const LanguageTag& tag) { return tag.is_english(); }))
    langs.push_back(LanguageTag{"en"});
  const auto x2x = enumerate_directions(langs, DirectionFilter::x2x).size();
  const auto en2x = enumerate_directions(langs, DirectionFilter::en2x).size();
  const auto x2en = enumerate_directions(langs, DirectionFilter::x2en).size();
  std::cout << "directions: " << x2x << " x2x, " << en2x << " en2x, " << x2en
            << " x2en\n";

  for (const auto strategy : {Strategy::direct, Strategy::pivot, Strategy::eaxt}) {
    const auto candidates = read_candidates(config.run_dir, strategy);
    if (candidates.empty()) continue;
    std::set<std::string> directions;
    for (const auto& candidate : candidates)
      directions.insert(Direction{candidate.task.src, candidate.task.tgt}.label());
    std::cout << "candidates[" << strategy_name(strategy) << "]: " << candidates.size()
              << " across " << directions.size() << " directions\n";
  }

  for (const auto strategy : {Strategy::direct, Strategy::pivot, Strategy::eaxt}) {
    const auto path = prefs_path(config, strategy);
    if (!std::filesystem::exists(path)) continue;
    const auto recorded = read_recorded_stats(prefs_stats_path(config, strategy));
    std::cout << "prefs[" << strategy_name(strategy) << "]: " << count_lines(path)
              << " pairs kept of " << recorded.stats.input << "\n";
  }
  if (std::filesystem::exists(rm_prefs_path(config))) {
    const auto recorded = read_recorded_stats(rm_prefs_stats_path(config));
    std::cout << "prefs[rm]: " << count_lines(rm_prefs_path(config)) << " pairs kept of "
              << recorded.stats.input << "\n";
  }

  const auto datasets_dir = config.run_dir / "datasets";
  if (std::filesystem::exists(datasets_dir)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(datasets_dir))
      if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::size_t count = 0;
      try {
        count = read_manifest(file).count;
      } catch (const Error&) {
        count = count_lines(file);
      }
      std::cout << "dataset " << file.filename().string() << ": " << count
                << " records\n";
    }
  }
  return 0;
}

}  // namespace x2x
