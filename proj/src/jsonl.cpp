#include "x2x/jsonl.hpp"

#include <cstdio>
#include <system_error>

#include <nlohmann/json.hpp>

namespace x2x {

namespace fs = std::filesystem;

std::string to_jsonl_line(const Json& value) {
  return value.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

Json parse_json_line(const std::string& line, std::size_t line_no) {
  Json parsed = Json::parse(line, nullptr, false);
  if (parsed.is_discarded())
    throw Error("malformed JSON at line " + std::to_string(line_no));
  return parsed;
}

void for_each_jsonl(const fs::path& path,
                    const std::function<void(Json&&, std::size_t)>& fn,
                    bool tolerate_trailing_garbage) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json parsed = Json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      if (tolerate_trailing_garbage && in.peek() == EOF) return;
      throw Error("malformed JSON in " + path.string() + " line " +
                  std::to_string(line_no));
    }
    fn(std::move(parsed), line_no);
  }
}

std::vector<Json> read_jsonl(const fs::path& path,
                             bool tolerate_trailing_garbage) {
  std::vector<Json> out;
  for_each_jsonl(
      path, [&](Json&& record, std::size_t) { out.push_back(std::move(record)); },
      tolerate_trailing_garbage);
  return out;
}

std::size_t count_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

void atomic_write_file(const fs::path& path, const std::string& contents) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".")
                                                    : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error("rename " + tmp.string() + " -> " + path.string() + ": " +
                      ec.message());
}

void atomic_write_jsonl(const fs::path& path, const std::vector<Json>& records) {
  std::string buffer;
  for (const Json& record : records) {
    buffer += to_jsonl_line(record);
    buffer += '\n';
  }
  atomic_write_file(path, buffer);
}

LedgerWriter::LedgerWriter(const fs::path& path) : path_(path) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::app);
  if (!out_) throw Error("cannot open ledger " + path.string());
}

void LedgerWriter::append(const std::vector<Json>& records) {
  std::string block;
  for (const Json& record : records) {
    block += to_jsonl_line(record);
    block += '\n';
  }
  out_.write(block.data(), static_cast<std::streamsize>(block.size()));
  out_.flush();
  if (!out_) throw Error("ledger append failed: " + path_.string());
}

}  // namespace x2x
