#include "hirec/executor.hpp"

#include "hirec/text.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

namespace hirec {

namespace fs = std::filesystem;

std::string_view to_string(ExecErrorKind k) noexcept {
  switch (k) {
    case ExecErrorKind::timeout: return "timeout";
    case ExecErrorKind::nonzero_exit: return "nonzero_exit";
    case ExecErrorKind::non_numeric: return "non_numeric";
    case ExecErrorKind::launch_failure: return "launch_failure";
  }
  return "launch_failure";
}

std::optional<double> parse_real(std::string_view s) {
  s = text::trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

namespace {

constexpr std::size_t kMaxCapture = 1 << 20;

/// Counting limiter whose capacity follows the most recent configuration.
class ProcessLimiter {
 public:
  void acquire(std::size_t capacity) {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return running_ < capacity; });
    ++running_;
  }
  void release() {
    {
      std::lock_guard lk(mu_);
      --running_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t running_ = 0;
};

ProcessLimiter& limiter() {
  static ProcessLimiter l;
  return l;
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& parent) {
    const fs::path base = parent.empty() ? fs::temp_directory_path() : fs::path(parent);
    std::string tmpl = (base / "hirec-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error(std::string("mkdtemp: ") + std::strerror(errno));
    path_ = tmpl;
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
};

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe2(fd, O_CLOEXEC) != 0) throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
  }
  ~Pipe() {
    close_read();
    close_write();
  }
  void close_read() {
    if (fd[0] >= 0) ::close(fd[0]);
    fd[0] = -1;
  }
  void close_write() {
    if (fd[1] >= 0) ::close(fd[1]);
    fd[1] = -1;
  }
};

std::string last_nonempty_line(std::string_view s) {
  std::size_t end = s.size();
  while (end > 0) {
    auto nl = s.rfind('\n', end - 1);
    const std::size_t begin = nl == std::string_view::npos ? 0 : nl + 1;
    auto line = text::trim(s.substr(begin, end - begin));
    if (!line.empty()) return std::string(line);
    if (nl == std::string_view::npos) break;
    end = nl;
  }
  return {};
}

}  // namespace

ProgramExecution execute_program(std::string_view program_text, const ExecutorConfig& cfg) {
  ProgramExecution ex;
  ex.program_text = std::string(program_text);
  const auto started = std::chrono::steady_clock::now();
  auto finish = [&](std::optional<ExecErrorKind> err) {
    ex.error_kind = err;
    ex.duration = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
    return ex;
  };
  if (cfg.command.empty()) {
    ex.stdout_text = "executor command is empty";
    return finish(ExecErrorKind::launch_failure);
  }

  const std::size_t capacity =
      cfg.max_concurrent ? cfg.max_concurrent : std::max(1u, std::thread::hardware_concurrency());
  limiter().acquire(capacity);
  struct Release {
    ~Release() { limiter().release(); }
  } release;

  std::optional<ScratchDir> dir;
  try {
    dir.emplace(cfg.workdir);
    std::ofstream(dir->path() / cfg.file_name, std::ios::binary)
        << text::fill_template(cfg.driver_template, {{"program", std::string(program_text)}});
  } catch (const std::exception& e) {
    ex.stdout_text = e.what();
    return finish(ExecErrorKind::launch_failure);
  }

  std::vector<std::string> argv_store = cfg.command;
  argv_store.push_back((dir->path() / cfg.file_name).string());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);

  std::vector<std::string> env_store;
  for (const char* keep : {"PATH", "LANG", "LC_ALL", "TZ"})
    if (const char* v = std::getenv(keep)) env_store.push_back(std::string(keep) + "=" + v);
  env_store.push_back("HOME=" + dir->path().string());
  env_store.push_back("TMPDIR=" + dir->path().string());
  env_store.push_back("PYTHONDONTWRITEBYTECODE=1");
  env_store.push_back("PYTHONIOENCODING=utf-8");
  std::vector<char*> envp;
  for (auto& e : env_store) envp.push_back(e.data());
  envp.push_back(nullptr);
  const std::string workdir = dir->path().string();

  Pipe out, err, status;
  const pid_t pid = ::fork();
  if (pid < 0) {
    ex.stdout_text = std::string("fork: ") + std::strerror(errno);
    return finish(ExecErrorKind::launch_failure);
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::unshare(CLONE_NEWUSER | CLONE_NEWNET);  // best effort; unprivileged kernels may refuse
    ::dup2(out.fd[1], STDOUT_FILENO);
    ::dup2(err.fd[1], STDERR_FILENO);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    if (::chdir(workdir.c_str()) == 0) ::execvpe(argv[0], argv.data(), envp.data());
    const int code = errno;
    [[maybe_unused]] auto n = ::write(status.fd[1], &code, sizeof code);
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  out.close_write();
  err.close_write();
  status.close_write();

  std::string captured_out, captured_err;
  const auto deadline = started + cfg.timeout;
  bool timed_out = false;
  pollfd fds[2] = {{out.fd[0], POLLIN, 0}, {err.fd[0], POLLIN, 0}};
  int open_fds = 2;
  char buf[4096];
  while (open_fds > 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    const int rc = ::poll(fds, 2, static_cast<int>(std::min<long long>(left.count(), 1000)));
    if (rc < 0 && errno != EINTR) break;
    for (int i = 0; i < 2; ++i) {
      if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const ssize_t n = ::read(fds[i].fd, buf, sizeof buf);
      if (n <= 0) {
        fds[i].fd = -1;
        --open_fds;
        continue;
      }
      auto& dst = i == 0 ? captured_out : captured_err;
      if (dst.size() < kMaxCapture) dst.append(buf, static_cast<std::size_t>(n));
    }
  }

  int wstatus = 0;
  for (;;) {
    if (timed_out) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      while (::waitpid(pid, &wstatus, 0) < 0 && errno == EINTR) {
      }
      break;
    }
    const pid_t r = ::waitpid(pid, &wstatus, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      timed_out = true;
      continue;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  ::kill(-pid, SIGKILL);  // reap stragglers in the group

  int exec_errno = 0;
  const bool launch_failed = ::read(status.fd[0], &exec_errno, sizeof exec_errno) == sizeof exec_errno;

  ex.stdout_text = captured_out;
  if (launch_failed) {
    ex.stdout_text = "cannot launch " + cfg.command.front() + ": " + std::strerror(exec_errno);
    return finish(ExecErrorKind::launch_failure);
  }
  if (timed_out) {
    ex.stdout_text += captured_err;
    return finish(ExecErrorKind::timeout);
  }
  if (!WIFEXITED(wstatus) || WEXITSTATUS(wstatus) != 0) {
    ex.stdout_text += captured_err;
    return finish(ExecErrorKind::nonzero_exit);
  }
  ex.exit_ok = true;
  ex.returned_value = parse_real(last_nonempty_line(captured_out));
  if (!ex.returned_value) {
    ex.stdout_text += captured_err;
    return finish(ExecErrorKind::non_numeric);
  }
  return finish(std::nullopt);
}

}  // namespace hirec
