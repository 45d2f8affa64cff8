#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "x2x/base.hpp"
#include "x2x/corpus.hpp"

namespace x2x {

enum class Role { system, user };

std::string role_name(Role role);
Role parse_role(std::string_view name);

struct Message {
  Role role;
  std::string text;
  bool operator==(const Message&) const = default;
};

// What a template is usable for, derived from its placeholder signature:
//   direct: {src_lang_name, tgt_lang_name, source_text}
//   eaxt:   direct + english_text
//   judge:  {source_text, tgt_lang_name, candidate_text}
enum class TemplateKind { direct, eaxt, judge };

std::string template_kind_name(TemplateKind kind);

// A chat-style template with {name} placeholders. Validation happens at
// registration: every placeholder in the text must belong to one of the kind
// signatures above, adjacent placeholders must be separated by a literal, and
// the placeholder set must match a kind exactly.
class PromptTemplate {
 public:
  PromptTemplate(std::string name, std::vector<Message> messages);

  const std::string& name() const { return name_; }
  TemplateKind kind() const { return kind_; }
  const std::vector<Message>& messages() const { return messages_; }
  const std::vector<std::string>& required_placeholders() const {
    return placeholders_;
  }

  std::vector<Message> render(const std::map<std::string, std::string>& values) const;

  // Inverse of render: recover placeholder values from a rendered prompt.
  // Exact for corpus texts (whitespace-normalized, so newline-free); the
  // final placeholder of a message additionally tolerates newlines in its
  // value by anchoring on the terminal literal.
  std::optional<std::map<std::string, std::string>> extract(
      const std::vector<Message>& rendered) const;

 private:
  std::string name_;
  TemplateKind kind_;
  std::vector<Message> messages_;
  std::vector<std::string> placeholders_;  // sorted, unique
};

struct RenderedPrompt {
  std::vector<Message> messages;
  bool operator==(const RenderedPrompt&) const = default;
};

struct TemplateMatch {
  std::string template_name;
  TemplateKind kind;
  std::map<std::string, std::string> values;
};

class TemplateRegistry {
 public:
  // Registry preloaded with the built-in template set (4 direct variants,
  // 2 EAxT variants, 1 judge).
  static TemplateRegistry with_builtins();

  void register_template(PromptTemplate tpl);
  // Template file: a JSON document {name, messages:[{role, text}]} or an
  // array of such documents.
  void load_file(const std::filesystem::path& path);

  const PromptTemplate& by_name(const std::string& name) const;
  std::vector<const PromptTemplate*> by_kind(TemplateKind kind) const;
  std::vector<const PromptTemplate*> all() const;

  // Deterministic variant choice: seeded hash of `key` over the kind's
  // variants (sorted by name). This is the "seeded rotation" used for
  // instruction diversity.
  const PromptTemplate& pick(TemplateKind kind, std::uint64_t seed,
                             std::string_view key) const;

  // Tries every registered template (name order) and returns the first one
  // whose inverse match consumes the prompt.
  std::optional<TemplateMatch> extract(const RenderedPrompt& prompt) const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

RenderedPrompt render_direct(const PromptTemplate& tpl, const LanguageTag& src,
                             const LanguageTag& tgt, const std::string& source_text);

RenderedPrompt render_eaxt(const PromptTemplate& tpl, const LanguageTag& src,
                           const LanguageTag& tgt, const std::string& source_text,
                           const std::string& english_text);

RenderedPrompt render_judge(const PromptTemplate& tpl, const std::string& source_text,
                            const LanguageTag& tgt, const std::string& candidate_text);

}  // namespace x2x
