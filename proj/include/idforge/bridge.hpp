#pragma once

// File + subprocess bridge to external generators and embedders.
//
// For each batch the engine writes <work_dir>/batch_<b>.idv and runs the
// command with `--in <file> --out <dir>` (or substitutes {in} / {out} when the
// template contains them). The adapter must exit 0 and leave, in <dir>:
//   images mode:     img_<k>.pgm or img_<k>.ppm for every row k of the batch
//   embeddings mode: out.idv with one row per input row

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "idforge/error.hpp"
#include "idforge/generator.hpp"

namespace idforge {

enum class BridgeMode { images, embeddings };

struct BridgeConfig {
  std::string command;
  std::filesystem::path work_dir;
  std::size_t batch_size = 64;
  int timeout_seconds = 600;
  BridgeMode mode = BridgeMode::images;

  void validate() const;
  /// timeout_seconds, unless IDFORGE_BRIDGE_TIMEOUT holds a positive integer.
  int effective_timeout() const;
};

class BridgeError : public Error {
 public:
  BridgeError(ErrorKind kind, const std::string& what, std::string stderr_text = {},
              long missing_index = -1)
      : Error(kind, what), stderr_(std::move(stderr_text)), missing_index_(missing_index) {}

  const std::string& captured_stderr() const { return stderr_; }
  long missing_index() const { return missing_index_; }

 private:
  std::string stderr_;
  long missing_index_;
};

struct BridgeOutput {
  std::vector<Image> images;  // images mode
  Matrix embeddings;          // embeddings mode
};

/// Runs every batch in input order; outputs keep input order.
BridgeOutput bridge_generate(const BridgeConfig& cfg, const Matrix& vectors);

/// Generator over an images-mode bridge (one vector per invocation through
/// generate(), or whole batches through generate_many()). No VJP.
class BridgeGenerator final : public Generator {
 public:
  explicit BridgeGenerator(BridgeConfig cfg);

  Image generate(const FeatureVector& v) const override;
  std::vector<Image> generate_many(const Matrix& vectors) const;

 private:
  BridgeConfig cfg_;
};

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string stderr_text;
};

/// Runs `/bin/sh -c command` in its own process group, killing the group on
/// timeout. stdout is discarded; stderr is captured.
ProcessResult run_shell(const std::string& command, int timeout_seconds,
                        const std::filesystem::path& stderr_file);

std::string shell_quote(const std::string& s);

}  // namespace idforge
