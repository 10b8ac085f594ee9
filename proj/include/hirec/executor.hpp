#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hirec {

enum class ExecErrorKind { timeout, nonzero_exit, non_numeric, launch_failure };

std::string_view to_string(ExecErrorKind k) noexcept;

struct ExecutorConfig {
  /// Interpreter argv; the program file path is appended.
  std::vector<std::string> command{"python3"};
  std::chrono::milliseconds timeout{10000};
  /// Parent for the per-run scratch directory; empty means the system temp directory.
  std::string workdir;
  std::string file_name = "program.py";
  /// Wraps the generated program so that running it prints solution()'s value on one line.
  std::string driver_template = "{program}\n\n\nif __name__ == \"__main__\":\n    print(solution())\n";
  /// Process-wide cap on concurrently running interpreters; 0 means hardware concurrency.
  std::size_t max_concurrent = 0;
};

struct ProgramExecution {
  std::string program_text;
  /// Captured stdout; on failure stderr is appended.
  std::string stdout_text;
  std::optional<double> returned_value;
  bool exit_ok = false;
  std::chrono::milliseconds duration{0};
  std::optional<ExecErrorKind> error_kind;
};

/// Runs `program_text` through the configured interpreter in a fresh empty directory with a
/// scrubbed environment and, where the kernel permits, no network namespace. The returned value
/// is the last non-empty stdout line parsed as a finite real.
ProgramExecution execute_program(std::string_view program_text, const ExecutorConfig& cfg = {});

/// Parses a whole string as a finite real (surrounding whitespace allowed).
std::optional<double> parse_real(std::string_view s);

}  // namespace hirec
