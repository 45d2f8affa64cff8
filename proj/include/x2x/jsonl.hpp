#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "x2x/base.hpp"

namespace x2x {

using Json = nlohmann::json;

// Canonical single-line serialization: sorted keys, no whitespace. Every
// ledger and dataset file in the pipeline is written through this so reruns
// are byte-comparable.
std::string to_jsonl_line(const Json& value);

// Parse one line; throws Error with the line number on malformed input.
Json parse_json_line(const std::string& line, std::size_t line_no);

// Read a JSONL file, invoking fn(record, line_no) per line. Blank lines are
// skipped. When tolerate_trailing_garbage is true a malformed FINAL line is
// dropped silently (an interrupted append), otherwise it throws.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(Json&&, std::size_t)>& fn,
                    bool tolerate_trailing_garbage = false);

std::vector<Json> read_jsonl(const std::filesystem::path& path,
                             bool tolerate_trailing_garbage = false);

std::size_t count_lines(const std::filesystem::path& path);

// Write-to-temp + atomic rename. The target directory is created if needed.
void atomic_write_file(const std::filesystem::path& path,
                       const std::string& contents);

void atomic_write_jsonl(const std::filesystem::path& path,
                        const std::vector<Json>& records);

// Append-only ledger with line-granular flushing. append() writes the given
// records as one contiguous block and flushes, so a killed process leaves at
// most one torn line at the tail, which readers drop.
class LedgerWriter {
 public:
  explicit LedgerWriter(const std::filesystem::path& path);
  void append(const std::vector<Json>& records);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace x2x
