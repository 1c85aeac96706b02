#include "idforge/error.hpp"

namespace idforge {

std::string_view kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::config: return "config";
    case ErrorKind::shape: return "shape";
    case ErrorKind::domain: return "domain";
    case ErrorKind::data: return "data";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::index: return "index";
    case ErrorKind::rank: return "rank";
    case ErrorKind::factorization: return "factorization";
    case ErrorKind::exhaustion: return "exhaustion";
    case ErrorKind::constraint: return "constraint";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::budget: return "budget";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::bridge_timeout: return "bridge_timeout";
    case ErrorKind::bridge_exit: return "bridge_exit";
    case ErrorKind::bridge_incomplete: return "bridge_incomplete";
    case ErrorKind::bridge_malformed: return "bridge_malformed";
    case ErrorKind::lock: return "lock";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config:
      return 2;
    case ErrorKind::bridge_timeout:
    case ErrorKind::bridge_exit:
    case ErrorKind::bridge_incomplete:
    case ErrorKind::bridge_malformed:
      return 4;
    case ErrorKind::rank:
    case ErrorKind::factorization:
    case ErrorKind::numeric:
    case ErrorKind::budget:
      return 5;
    default:
      return 3;
  }
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace idforge
