#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace diffattn {

enum class ErrorKind {
  Config,
  Shape,
  Step,
  Ordering,
  Plan,
  Contract,
  Dependency,
  Numeric,
  DegenerateTarget,
  UndefinedMetric,
  Data,
  Io,
  Version,
};

/// Machine-readable category used in CLI error output and exit codes.
std::string_view category_name(ErrorKind kind);
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

/// Collects non-fatal conditions (empty ground truth, degenerate metrics, ...).
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
  bool empty() const { return warnings.empty(); }
};

inline void warn(Diagnostics* diag, std::string message) {
  if (diag != nullptr) diag->warn(std::move(message));
}

}  // namespace diffattn
