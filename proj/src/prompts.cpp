#include "x2x/prompts.hpp"

#include <algorithm>
#include <array>
#include <set>

#include <nlohmann/json.hpp>

#include "x2x/jsonl.hpp"
#include "x2x/rng.hpp"

namespace x2x {

std::string role_name(Role role) {
  return role == Role::system ? "system" : "user";
}

Role parse_role(std::string_view name) {
  if (name == "system") return Role::system;
  if (name == "user") return Role::user;
  throw Error("unknown message role '" + std::string(name) + "'");
}

std::string template_kind_name(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::direct: return "direct";
    case TemplateKind::eaxt: return "eaxt";
    case TemplateKind::judge: return "judge";
  }
  return "?";
}

namespace {

struct Token {
  bool is_placeholder;
  std::string text;  // literal text or placeholder name
};

bool valid_placeholder_char(char c) {
  return (c >= 'a' && c <= 'z') || c == '_';
}

// Split template text into literal / placeholder tokens. A brace pair forms
// a placeholder only when its content is a lowercase identifier; anything
// else stays literal.
std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  std::string literal;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && valid_placeholder_char(text[j])) ++j;
      if (j > i + 1 && j < text.size() && text[j] == '}') {
        if (!literal.empty()) {
          tokens.push_back({false, literal});
          literal.clear();
        }
        tokens.push_back({true, text.substr(i + 1, j - i - 1)});
        i = j + 1;
        continue;
      }
    }
    literal.push_back(text[i]);
    ++i;
  }
  if (!literal.empty()) tokens.push_back({false, literal});
  return tokens;
}

const std::set<std::string> kDirectSignature = {"src_lang_name", "tgt_lang_name",
                                                "source_text"};
const std::set<std::string> kEaxtSignature = {"src_lang_name", "tgt_lang_name",
                                              "source_text", "english_text"};
const std::set<std::string> kJudgeSignature = {"source_text", "tgt_lang_name",
                                               "candidate_text"};

}  // namespace

PromptTemplate::PromptTemplate(std::string name, std::vector<Message> messages)
    : name_(std::move(name)), messages_(std::move(messages)) {
  if (name_.empty()) throw Error("template needs a name");
  if (messages_.empty()) throw Error("template '" + name_ + "' has no messages");

  std::set<std::string> seen;
  for (const auto& message : messages_) {
    auto tokens = tokenize(message.text);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!tokens[i].is_placeholder) continue;
      seen.insert(tokens[i].text);
      if (i + 1 < tokens.size() && tokens[i + 1].is_placeholder)
        throw Error("template '" + name_ + "': placeholders {" + tokens[i].text +
                    "}{" + tokens[i + 1].text + "} need a separating literal");
    }
  }

  if (seen == kEaxtSignature)
    kind_ = TemplateKind::eaxt;
  else if (seen == kDirectSignature)
    kind_ = TemplateKind::direct;
  else if (seen == kJudgeSignature)
    kind_ = TemplateKind::judge;
  else {
    std::string got;
    for (const auto& p : seen) got += (got.empty() ? "{" : ", {") + p + "}";
    throw Error("template '" + name_ +
                "': placeholder set " + (got.empty() ? "(none)" : got) +
                " matches no template kind");
  }
  placeholders_.assign(seen.begin(), seen.end());
}

std::vector<Message> PromptTemplate::render(
    const std::map<std::string, std::string>& values) const {
  for (const auto& placeholder : placeholders_)
    if (!values.count(placeholder))
      throw Error("template '" + name_ + "': missing placeholder {" +
                  placeholder + "}");
  std::vector<Message> out;
  out.reserve(messages_.size());
  for (const auto& message : messages_) {
    std::string text;
    for (const auto& token : tokenize(message.text))
      text += token.is_placeholder ? values.at(token.text) : token.text;
    out.push_back({message.role, std::move(text)});
  }
  return out;
}

std::optional<std::map<std::string, std::string>> PromptTemplate::extract(
    const std::vector<Message>& rendered) const {
  if (rendered.size() != messages_.size()) return std::nullopt;
  std::map<std::string, std::string> values;

  for (std::size_t m = 0; m < messages_.size(); ++m) {
    if (rendered[m].role != messages_[m].role) return std::nullopt;
    const std::string& text = rendered[m].text;
    auto tokens = tokenize(messages_[m].text);
    std::size_t pos = 0;

    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const Token& token = tokens[i];
      if (!token.is_placeholder) {
        if (text.compare(pos, token.text.size(), token.text) != 0)
          return std::nullopt;
        pos += token.text.size();
        continue;
      }
      std::string value;
      if (i + 1 == tokens.size()) {
        value = text.substr(pos);
        pos = text.size();
      } else {
        const std::string& next_literal = tokens[i + 1].text;
        std::size_t end;
        if (i + 2 == tokens.size()) {
          // Final literal: anchor on the message tail so values containing
          // the literal (multi-line candidates) still recover exactly.
          if (text.size() < pos + next_literal.size()) return std::nullopt;
          end = text.size() - next_literal.size();
          if (text.compare(end, next_literal.size(), next_literal) != 0)
            return std::nullopt;
        } else {
          end = text.find(next_literal, pos);
          if (end == std::string::npos) return std::nullopt;
        }
        value = text.substr(pos, end - pos);
        pos = end;
      }
      auto [it, inserted] = values.emplace(token.text, value);
      if (!inserted && it->second != value) return std::nullopt;
    }
    if (pos != text.size()) return std::nullopt;
  }

  for (const auto& placeholder : placeholders_)
    if (!values.count(placeholder)) return std::nullopt;
  return values;
}

TemplateRegistry TemplateRegistry::with_builtins() {
  TemplateRegistry registry;
  auto add = [&](const char* name, std::vector<Message> messages) {
    registry.register_template(PromptTemplate(name, std::move(messages)));
  };

  add("direct/plain", {{Role::user,
                        "Translate the following text from {src_lang_name} into "
                        "{tgt_lang_name}.\n{src_lang_name}: {source_text}\n"
                        "{tgt_lang_name}:"}});
  add("direct/engine",
      {{Role::system, "You are a professional translation engine."},
       {Role::user, "Translate this {src_lang_name} sentence into "
                    "{tgt_lang_name}.\nSentence: {source_text}\nTranslation:"}});
  add("direct/source-block",
      {{Role::user, "{src_lang_name} source:\n{source_text}\n\nProvide the "
                    "{tgt_lang_name} translation only."}});
  add("direct/terse",
      {{Role::user, "Please translate the text below from {src_lang_name} to "
                    "{tgt_lang_name}. Reply with the translation and nothing "
                    "else.\nText: {source_text}"}});

  add("eaxt/reference-block",
      {{Role::user,
        "Translate the following {src_lang_name} text into {tgt_lang_name}. A "
        "reference translation in English is provided.\n{src_lang_name}: "
        "{source_text}\nEnglish reference: {english_text}\n{tgt_lang_name}:"}});
  add("eaxt/dual-source",
      {{Role::system, "You are a professional translation engine."},
       {Role::user,
        "Using both the {src_lang_name} source and its English reference, "
        "produce the {tgt_lang_name} translation.\nSource ({src_lang_name}): "
        "{source_text}\nReference (English): {english_text}\nTranslation "
        "({tgt_lang_name}):"}});

  add("judge/sqm",
      {{Role::user,
        "Score the following translation from the source text on a continuous "
        "scale from 0 to 100, where 0 means \"no meaning preserved\" and 100 "
        "means \"perfect meaning and grammar\". Reply with the score "
        "only.\nSource: {source_text}\nTarget language: {tgt_lang_name}\n"
        "Translation: {candidate_text}\nScore:"}});

  return registry;
}

void TemplateRegistry::register_template(PromptTemplate tpl) {
  std::string name = tpl.name();
  auto [it, inserted] = templates_.emplace(name, std::move(tpl));
  if (!inserted) throw Error("duplicate template name '" + name + "'");
}

void TemplateRegistry::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open template file " + path.string());
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded())
    throw Error("template file is not valid JSON: " + path.string());

  auto parse_one = [&](const Json& obj) {
    if (!obj.is_object() || !obj.contains("name") || !obj.contains("messages"))
      throw Error("template document needs {name, messages}: " + path.string());
    std::vector<Message> messages;
    for (const auto& m : obj.at("messages"))
      messages.push_back(
          {parse_role(m.at("role").get<std::string>()), m.at("text").get<std::string>()});
    register_template(PromptTemplate(obj.at("name").get<std::string>(),
                                     std::move(messages)));
  };

  if (doc.is_array())
    for (const auto& obj : doc) parse_one(obj);
  else
    parse_one(doc);
}

const PromptTemplate& TemplateRegistry::by_name(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw Error("unknown template '" + name + "'");
  return it->second;
}

std::vector<const PromptTemplate*> TemplateRegistry::by_kind(TemplateKind kind) const {
  std::vector<const PromptTemplate*> out;
  for (const auto& [name, tpl] : templates_)
    if (tpl.kind() == kind) out.push_back(&tpl);
  return out;  // map order = sorted by name
}

std::vector<const PromptTemplate*> TemplateRegistry::all() const {
  std::vector<const PromptTemplate*> out;
  for (const auto& [name, tpl] : templates_) out.push_back(&tpl);
  return out;
}

const PromptTemplate& TemplateRegistry::pick(TemplateKind kind, std::uint64_t seed,
                                             std::string_view key) const {
  auto variants = by_kind(kind);
  if (variants.empty())
    throw Error("no registered template of kind " + template_kind_name(kind));
  std::uint64_t h = mix_seed(seed, {fnv1a64(key), fnv1a64(template_kind_name(kind))});
  return *variants[h % variants.size()];
}

std::optional<TemplateMatch> TemplateRegistry::extract(const RenderedPrompt& prompt) const {
  for (const auto& [name, tpl] : templates_) {
    if (auto values = tpl.extract(prompt.messages))
      return TemplateMatch{name, tpl.kind(), std::move(*values)};
  }
  return std::nullopt;
}

RenderedPrompt render_direct(const PromptTemplate& tpl, const LanguageTag& src,
                             const LanguageTag& tgt, const std::string& source_text) {
  if (tpl.kind() != TemplateKind::direct)
    throw Error("template '" + tpl.name() + "' is not a direct template");
  return RenderedPrompt{tpl.render({{"src_lang_name", language_display_name(src)},
                                    {"tgt_lang_name", language_display_name(tgt)},
                                    {"source_text", source_text}})};
}

RenderedPrompt render_eaxt(const PromptTemplate& tpl, const LanguageTag& src,
                           const LanguageTag& tgt, const std::string& source_text,
                           const std::string& english_text) {
  if (tpl.kind() != TemplateKind::eaxt)
    throw Error("template '" + tpl.name() + "' is not an eaxt template");
  if (english_text.empty())
    throw Error("eaxt rendering requires a non-empty english_text");
  return RenderedPrompt{tpl.render({{"src_lang_name", language_display_name(src)},
                                    {"tgt_lang_name", language_display_name(tgt)},
                                    {"source_text", source_text},
                                    {"english_text", english_text}})};
}

RenderedPrompt render_judge(const PromptTemplate& tpl, const std::string& source_text,
                            const LanguageTag& tgt, const std::string& candidate_text) {
  if (tpl.kind() != TemplateKind::judge)
    throw Error("template '" + tpl.name() + "' is not a judge template");
  return RenderedPrompt{tpl.render({{"source_text", source_text},
                                    {"tgt_lang_name", language_display_name(tgt)},
                                    {"candidate_text", candidate_text}})};
}

}  // namespace x2x
