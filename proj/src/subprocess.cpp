#include "x2x/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <map>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "x2x/base.hpp"
#include "x2x/jsonl.hpp"

namespace x2x {

namespace {

struct Pipe {
  int fds[2] = {-1, -1};
  Pipe() {
    if (pipe(fds) != 0) throw Error("pipe() failed");
  }
  ~Pipe() {
    close_read();
    close_write();
  }
  void close_read() {
    if (fds[0] >= 0) ::close(fds[0]);
    fds[0] = -1;
  }
  void close_write() {
    if (fds[1] >= 0) ::close(fds[1]);
    fds[1] = -1;
  }
};

}  // namespace

LineProtocolOutcome run_line_protocol(const std::string& command,
                                      const std::vector<std::string>& request_lines,
                                      const std::vector<std::string>& request_ids,
                                      int timeout_ms, int max_in_flight) {
  if (request_lines.size() != request_ids.size())
    throw Error("request_lines and request_ids must align");
  if (command.empty()) throw Error("subprocess command is empty");
  if (max_in_flight < 1) max_in_flight = 1;

  // A child closing stdin early must surface as a short write, not SIGPIPE.
  static const bool sigpipe_ignored = [] {
    signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;

  LineProtocolOutcome outcome;
  outcome.replies.resize(request_lines.size());

  std::map<std::string, std::size_t> index_by_id;
  for (std::size_t i = 0; i < request_ids.size(); ++i)
    index_by_id[request_ids[i]] = i;

  Pipe to_child, from_child, err_child;
  pid_t pid = fork();
  if (pid < 0) throw Error("fork() failed");
  if (pid == 0) {
    dup2(to_child.fds[0], STDIN_FILENO);
    dup2(from_child.fds[1], STDOUT_FILENO);
    dup2(err_child.fds[1], STDERR_FILENO);
    to_child.close_write();
    from_child.close_read();
    err_child.close_read();
    execl("/bin/sh", "sh", "-c", command.c_str(), nullptr);
    _exit(127);
  }
  to_child.close_read();
  from_child.close_write();
  err_child.close_write();

  std::mutex window_mutex;
  std::condition_variable window_cv;
  std::size_t received = 0;
  bool reader_done = false;

  // Writer thread keeps at most max_in_flight requests in the pipe.
  std::thread writer([&] {
    for (std::size_t i = 0; i < request_lines.size(); ++i) {
      {
        std::unique_lock<std::mutex> lock(window_mutex);
        window_cv.wait(lock, [&] {
          return reader_done || i < received + static_cast<std::size_t>(max_in_flight);
        });
        if (reader_done) break;
      }
      std::string line = request_lines[i];
      line += '\n';
      std::size_t off = 0;
      while (off < line.size()) {
        ssize_t n = write(to_child.fds[1], line.data() + off, line.size() - off);
        if (n <= 0) return;  // child closed stdin; reader will see EOF
        off += static_cast<std::size_t>(n);
      }
    }
    to_child.close_write();
  });

  // Reader: poll stdout/stderr with an inactivity timeout.
  std::string stdout_buf, stderr_buf;
  auto handle_reply = [&](const std::string& line) {
    if (line.empty()) return;
    Json parsed = Json::parse(line, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("id"))
      return;  // not a protocol line; ignore
    std::string id = parsed.at("id").is_string()
                         ? parsed.at("id").get<std::string>()
                         : parsed.at("id").dump();
    auto it = index_by_id.find(id);
    if (it == index_by_id.end()) return;
    outcome.replies[it->second] = line;
    {
      std::lock_guard<std::mutex> lock(window_mutex);
      ++received;
    }
    window_cv.notify_all();
  };

  bool stdout_open = true, stderr_open = true;
  while (stdout_open || stderr_open) {
    struct pollfd fds[2];
    nfds_t nfds = 0;
    int stdout_slot = -1, stderr_slot = -1;
    if (stdout_open) {
      stdout_slot = static_cast<int>(nfds);
      fds[nfds++] = {from_child.fds[0], POLLIN, 0};
    }
    if (stderr_open) {
      stderr_slot = static_cast<int>(nfds);
      fds[nfds++] = {err_child.fds[0], POLLIN, 0};
    }
    int rc = poll(fds, nfds, timeout_ms);
    if (rc == 0) {
      outcome.timed_out = true;
      kill(pid, SIGKILL);
      break;
    }
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    auto drain = [&](int fd, std::string& buf, bool& open, bool is_stdout) {
      char chunk[4096];
      ssize_t n = read(fd, chunk, sizeof(chunk));
      if (n <= 0) {
        open = false;
        return;
      }
      buf.append(chunk, static_cast<std::size_t>(n));
      if (!is_stdout) return;
      std::size_t start = 0, nl;
      while ((nl = buf.find('\n', start)) != std::string::npos) {
        handle_reply(buf.substr(start, nl - start));
        start = nl + 1;
      }
      buf.erase(0, start);
    };
    if (stdout_slot >= 0 && (fds[stdout_slot].revents & (POLLIN | POLLHUP)))
      drain(from_child.fds[0], stdout_buf, stdout_open, true);
    if (stderr_slot >= 0 && (fds[stderr_slot].revents & (POLLIN | POLLHUP)))
      drain(err_child.fds[0], stderr_buf, stderr_open, false);
  }
  if (!stdout_buf.empty()) handle_reply(stdout_buf);

  {
    std::lock_guard<std::mutex> lock(window_mutex);
    reader_done = true;
  }
  window_cv.notify_all();
  writer.join();
  to_child.close_write();

  int status = 0;
  waitpid(pid, &status, 0);
  outcome.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
  if (stderr_buf.size() > 2000)
    stderr_buf.erase(0, stderr_buf.size() - 2000);
  outcome.stderr_tail = stderr_buf;
  return outcome;
}

}  // namespace x2x
