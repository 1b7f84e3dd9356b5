#pragma once

// Minimal POSIX child-process wrapper: filtered environment, fresh cwd, its
// own process group, piped stdio and deadline-bounded line reads.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <system_error>
#include <vector>

#include "codecor/errors.hpp"

namespace codecor::detail {

using Clock = std::chrono::steady_clock;

/// Directory created on construction and removed recursively on destruction.
class TempDir {
 public:
  explicit TempDir(const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    std::string tmpl = (root / "codecor-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr)
      throw SandboxUnavailable("cannot create work directory under " + root.string() + ": " + std::strerror(errno));
    path_ = tmpl;
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

/// Absolute path of `name`, searching the parent's PATH when it has no slash.
inline std::optional<std::string> resolve_executable(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name.find('/') != std::string::npos) {
    if (::access(name.c_str(), X_OK) == 0) return name;
    return std::nullopt;
  }
  const char* path = std::getenv("PATH");
  std::string dirs = path ? path : "/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= dirs.size()) {
    auto end = dirs.find(':', start);
    if (end == std::string::npos) end = dirs.size();
    std::string dir = dirs.substr(start, end - start);
    if (dir.empty()) dir = ".";
    std::string candidate = dir + "/" + name;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate;
    start = end + 1;
  }
  return std::nullopt;
}

enum class ReadStatus { Line, Eof, TimedOut };

struct ExitInfo {
  bool exited = false;
  int code = 0;
  int signal = 0;

  std::string describe() const {
    if (exited) return "exit code " + std::to_string(code);
    if (signal) return std::string("signal ") + std::to_string(signal);
    return "unknown status";
  }
};

class Subprocess {
 public:
  Subprocess(const std::string& exe, const std::vector<std::string>& args, const std::vector<std::string>& env,
             const std::filesystem::path& cwd) {
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(exe.c_str()));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    std::vector<char*> envp;
    for (const auto& e : env) envp.push_back(const_cast<char*>(e.c_str()));
    envp.push_back(nullptr);
    const std::string cwd_str = cwd.string();

    int in[2], out[2], err[2], status[2];
    if (::pipe(in) || ::pipe(out) || ::pipe(err) || ::pipe2(status, O_CLOEXEC))
      throw SandboxUnavailable(std::string("pipe: ") + std::strerror(errno));

    pid_ = ::fork();
    if (pid_ < 0) throw SandboxUnavailable(std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
      ::setpgid(0, 0);
      ::dup2(in[0], 0);
      ::dup2(out[1], 1);
      ::dup2(err[1], 2);
      for (int fd : {in[0], in[1], out[0], out[1], err[0], err[1], status[0]}) ::close(fd);
      int e = 0;
      if (::chdir(cwd_str.c_str()) != 0) {
        e = errno;
      } else {
        ::execve(argv[0], argv.data(), envp.data());
        e = errno;
      }
      [[maybe_unused]] auto n = ::write(status[1], &e, sizeof e);
      ::_exit(127);
    }
    ::setpgid(pid_, pid_);
    ::close(in[0]);
    ::close(out[1]);
    ::close(err[1]);
    ::close(status[1]);
    stdin_ = in[1];
    stdout_ = out[0];
    stderr_ = err[0];

    int child_errno = 0;
    ssize_t n;
    do {
      n = ::read(status[0], &child_errno, sizeof child_errno);
    } while (n < 0 && errno == EINTR);
    ::close(status[0]);
    if (n > 0) {
      wait();
      close_all();
      throw SandboxUnavailable("cannot start " + exe + ": " + std::strerror(child_errno));
    }
  }

  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  ~Subprocess() {
    if (pid_ > 0 && !reaped_) {
      kill();
      wait();
    }
    close_all();
  }

  /// Writes the whole buffer, then closes stdin. Returns false if the child
  /// closed its end first.
  bool write_and_close_stdin(const std::string& data) {
    sigset_t block, old;
    sigemptyset(&block);
    sigaddset(&block, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &block, &old);
    bool ok = true;
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::write(stdin_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        ok = false;
        break;
      }
      off += static_cast<std::size_t>(n);
    }
    if (!ok) {
      // Swallow the pending SIGPIPE so it does not fire once unblocked.
      const timespec zero{0, 0};
      sigtimedwait(&block, nullptr, &zero);
    }
    pthread_sigmask(SIG_SETMASK, &old, nullptr);
    ::close(stdin_);
    stdin_ = -1;
    return ok;
  }

  /// Next newline-terminated stdout line (without the newline). Stderr is
  /// drained into diagnostics() meanwhile.
  ReadStatus read_line(std::string& line, Clock::time_point deadline) {
    while (true) {
      if (auto nl = buf_.find('\n'); nl != std::string::npos) {
        line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return ReadStatus::Line;
      }
      if (stdout_ < 0) {
        if (!buf_.empty()) {
          line = std::move(buf_);
          buf_.clear();
          return ReadStatus::Line;
        }
        return ReadStatus::Eof;
      }
      const auto now = Clock::now();
      if (now >= deadline) return ReadStatus::TimedOut;
      const auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count() + 1;
      pollfd fds[2] = {{stdout_, POLLIN, 0}, {stderr_, POLLIN, 0}};
      const nfds_t nfds = stderr_ >= 0 ? 2 : 1;
      const int rc = ::poll(fds, nfds, static_cast<int>(std::min<long long>(wait_ms, 60'000)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw SandboxError(std::string("poll: ") + std::strerror(errno));
      }
      if (nfds == 2 && (fds[1].revents & (POLLIN | POLLHUP | POLLERR))) drain(stderr_, diag_, true);
      if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) drain(stdout_, buf_, false);
    }
  }

  void kill() noexcept {
    if (pid_ > 0 && !reaped_) ::killpg(pid_, SIGKILL);
  }

  ExitInfo wait() {
    ExitInfo info;
    if (pid_ <= 0 || reaped_) return exit_;
    int status = 0;
    pid_t r;
    do {
      r = ::waitpid(pid_, &status, 0);
    } while (r < 0 && errno == EINTR);
    reaped_ = true;
    if (r == pid_) {
      if (WIFEXITED(status)) {
        info.exited = true;
        info.code = WEXITSTATUS(status);
      } else if (WIFSIGNALED(status)) {
        info.signal = WTERMSIG(status);
      }
    }
    // Reap any stragglers left in the group.
    ::killpg(pid_, SIGKILL);
    exit_ = info;
    return info;
  }

  const std::string& diagnostics() const noexcept { return diag_; }

 private:
  void drain(int& fd, std::string& sink, bool capped) {
    char chunk[4096];
    const ssize_t n = ::read(fd, chunk, sizeof chunk);
    if (n > 0) {
      if (!capped || sink.size() < 64 * 1024) sink.append(chunk, static_cast<std::size_t>(n));
      return;
    }
    if (n < 0 && errno == EINTR) return;
    ::close(fd);
    fd = -1;
  }

  void close_all() noexcept {
    for (int* fd : {&stdin_, &stdout_, &stderr_})
      if (*fd >= 0) {
        ::close(*fd);
        *fd = -1;
      }
  }

  pid_t pid_ = -1;
  bool reaped_ = false;
  ExitInfo exit_;
  int stdin_ = -1;
  int stdout_ = -1;
  int stderr_ = -1;
  std::string buf_;
  std::string diag_;
};

}  // namespace codecor::detail
