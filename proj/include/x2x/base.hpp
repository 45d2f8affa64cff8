#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace x2x {

// Raised for configuration, validation and contract violations. Data-path
// failures (a request timing out, a reply failing to parse) are recorded in
// result objects instead, so one bad record never aborts its siblings.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Failures of the surroundings rather than the inputs: missing auth variable,
// unreachable command, contended run directory. The CLI maps these to their
// own exit code.
class EnvironmentError : public Error {
 public:
  explicit EnvironmentError(const std::string& what) : Error(what) {}
};

// Trim leading/trailing whitespace and collapse internal whitespace runs to a
// single space. Applied to every corpus text on ingestion; normalized texts
// therefore never contain newlines or tabs, which template inverse matching
// relies on.
std::string normalize_whitespace(std::string_view text);

// Lenient UTF-8 decoding: invalid bytes decode as single code points so the
// function is total over arbitrary byte strings.
std::vector<char32_t> decode_utf8(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);
std::string to_hex(std::uint64_t value);

// Parse the first numeric token (integer or decimal) whose value lies in
// [lo, hi]. Returns false when no token qualifies.
bool parse_first_number_in_range(std::string_view text, double lo, double hi,
                                 double& out);

}  // namespace x2x
