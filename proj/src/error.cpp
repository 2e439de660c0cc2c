#include "diffattn/error.hpp"

namespace diffattn {

std::string_view category_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Step: return "step";
    case ErrorKind::Ordering: return "ordering";
    case ErrorKind::Plan: return "plan";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Dependency: return "dependency";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::DegenerateTarget: return "degenerate-target";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
    case ErrorKind::Version: return "version";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  // Codes below 10 are left for unexpected failures.
  return 10 + static_cast<int>(kind);
}

}  // namespace diffattn
