#pragma once

#include <optional>
#include <string>
#include <vector>

namespace x2x {

// One run of a line-delimited JSON child process: request lines go to its
// stdin (windowed so at most max_in_flight are outstanding), reply lines come
// back on stdout in any order and are matched to requests by their "id"
// field. Used by both the generation backend and the scorer adapter, which
// differ only in line schema.
struct LineProtocolOutcome {
  // Reply line per request index; nullopt = no reply (timeout, crash).
  std::vector<std::optional<std::string>> replies;
  int exit_code = -1;
  bool timed_out = false;
  std::string stderr_tail;
};

LineProtocolOutcome run_line_protocol(const std::string& command,
                                      const std::vector<std::string>& request_lines,
                                      const std::vector<std::string>& request_ids,
                                      int timeout_ms, int max_in_flight);

}  // namespace x2x
