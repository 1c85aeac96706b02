#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace idforge {

enum class ErrorKind {
  usage,
  config,
  shape,
  domain,
  data,
  insufficient_data,
  index,
  rank,
  factorization,
  exhaustion,
  constraint,
  numeric,
  budget,
  io,
  format,
  bridge_timeout,
  bridge_exit,
  bridge_incomplete,
  bridge_malformed,
  lock,
};

/// Stable machine-readable name, printed on the diagnostics stream by the CLI.
std::string_view kind_name(ErrorKind kind) noexcept;

/// Process exit code for a kind: 2 usage, 3 data, 4 bridge, 5 numeric.
int exit_code_for(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised by the rank check in PCA; carries the rank the data supports.
class RankError : public Error {
 public:
  RankError(const std::string& what, std::size_t achievable_rank)
      : Error(ErrorKind::rank, what), achievable_rank_(achievable_rank) {}

  std::size_t achievable_rank() const noexcept { return achievable_rank_; }

 private:
  std::size_t achievable_rank_;
};

/// Non-finite value during optimization; `iteration` is the step that produced it.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long iteration)
      : Error(ErrorKind::numeric, what), iteration_(iteration) {}

  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require_same_length(std::size_t a, std::size_t b, std::string_view what) {
  if (a != b) {
    fail(ErrorKind::shape, std::string(what) + ": length mismatch (" + std::to_string(a) +
                               " vs " + std::to_string(b) + ")");
  }
}

}  // namespace idforge
