#include "idforge/bridge.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

#include "idforge/idv.hpp"

extern char** environ;

namespace idforge {

namespace fs = std::filesystem;

void BridgeConfig::validate() const {
  if (command.empty()) fail(ErrorKind::config, "bridge: command is empty");
  if (work_dir.empty()) fail(ErrorKind::config, "bridge: work_dir is empty");
  if (batch_size < 1) fail(ErrorKind::config, "bridge: batch_size must be >= 1");
  if (timeout_seconds <= 0) fail(ErrorKind::config, "bridge: timeout must be > 0");
}

int BridgeConfig::effective_timeout() const {
  if (const char* env = std::getenv("IDFORGE_BRIDGE_TIMEOUT")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  return timeout_seconds;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (const char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out.push_back(c);
    }
  }
  out.push_back('\'');
  return out;
}

ProcessResult run_shell(const std::string& command, int timeout_seconds,
                        const fs::path& stderr_file) {
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, stderr_file.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);

  const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, &attr, const_cast<char**>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) fail(ErrorKind::bridge_exit, "bridge: cannot spawn /bin/sh");

  ProcessResult result;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(timeout_seconds);
  int status = 0;
  for (;;) {
    const pid_t w = waitpid(pid, &status, WNOHANG);
    if (w == pid) break;
    if (w < 0) fail(ErrorKind::bridge_exit, "bridge: waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      result.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (!result.timed_out) {
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  }
  std::error_code ec;
  if (fs::exists(stderr_file, ec)) result.stderr_text = read_file(stderr_file);
  return result;
}

namespace {

std::mutex& work_dir_mutex(const fs::path& dir) {
  static std::mutex registry_mutex;
  static std::map<std::string, std::mutex> registry;
  std::lock_guard lock(registry_mutex);
  return registry[fs::weakly_canonical(dir).string()];
}

std::string substitute(const std::string& templ, const fs::path& in, const fs::path& out) {
  const bool has_placeholder =
      templ.find("{in}") != std::string::npos || templ.find("{out}") != std::string::npos;
  if (!has_placeholder) {
    return templ + " --in " + shell_quote(in.string()) + " --out " + shell_quote(out.string());
  }
  std::string cmd = templ;
  for (const auto& [key, value] : {std::pair<std::string, std::string>{"{in}", in.string()},
                                   std::pair<std::string, std::string>{"{out}", out.string()}}) {
    for (std::size_t pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos)) {
      const std::string quoted = shell_quote(value);
      cmd.replace(pos, key.size(), quoted);
      pos += quoted.size();
    }
  }
  return cmd;
}

Image collect_image(const fs::path& out_dir, std::size_t k, std::size_t global_index) {
  const std::string stem = "img_" + std::to_string(k);
  for (const char* ext : {".pgm", ".ppm"}) {
    const fs::path p = out_dir / (stem + ext);
    if (fs::exists(p)) {
      try {
        return read_pnm(p);
      } catch (const Error& e) {
        throw BridgeError(ErrorKind::bridge_malformed,
                          "bridge: malformed output " + p.string() + ": " + e.what());
      }
    }
  }
  throw BridgeError(ErrorKind::bridge_incomplete,
                    "bridge: incomplete batch, missing image for index " +
                        std::to_string(global_index) + " (" + stem + ")",
                    {}, static_cast<long>(global_index));
}

}  // namespace

BridgeOutput bridge_generate(const BridgeConfig& cfg, const Matrix& vectors) {
  cfg.validate();
  std::lock_guard lock(work_dir_mutex(cfg.work_dir));
  fs::create_directories(cfg.work_dir);

  BridgeOutput output;
  const auto n = static_cast<std::size_t>(vectors.rows());
  if (cfg.mode == BridgeMode::embeddings) output.embeddings.resize(0, 0);
  const int timeout = cfg.effective_timeout();

  for (std::size_t first = 0, b = 0; first < n; first += cfg.batch_size, ++b) {
    const std::size_t count = std::min(cfg.batch_size, n - first);
    const fs::path in_file = cfg.work_dir / ("batch_" + std::to_string(b) + ".idv");
    const fs::path out_dir = cfg.work_dir / ("out_" + std::to_string(b));
    fs::remove_all(out_dir);
    fs::create_directories(out_dir);
    write_idv(in_file, vectors.middleRows(static_cast<Eigen::Index>(first),
                                          static_cast<Eigen::Index>(count)));

    const ProcessResult proc = run_shell(substitute(cfg.command, in_file, out_dir), timeout,
                                         cfg.work_dir / ("stderr_" + std::to_string(b) + ".txt"));
    if (proc.timed_out) {
      throw BridgeError(ErrorKind::bridge_timeout,
                        "bridge: batch " + std::to_string(b) + " timed out after " +
                            std::to_string(timeout) + " s",
                        proc.stderr_text);
    }
    if (proc.exit_code != 0) {
      throw BridgeError(ErrorKind::bridge_exit,
                        "bridge: adapter exited with status " + std::to_string(proc.exit_code) +
                            " on batch " + std::to_string(b) + ": " + proc.stderr_text,
                        proc.stderr_text);
    }

    if (cfg.mode == BridgeMode::images) {
      for (std::size_t k = 0; k < count; ++k) {
        output.images.push_back(collect_image(out_dir, k, first + k));
      }
      continue;
    }

    const fs::path out_file = out_dir / "out.idv";
    if (!fs::exists(out_file)) {
      throw BridgeError(ErrorKind::bridge_incomplete,
                        "bridge: batch " + std::to_string(b) + " produced no out.idv", {},
                        static_cast<long>(first));
    }
    IdvFile emb;
    try {
      emb = read_idv(out_file);
    } catch (const Error& e) {
      throw BridgeError(ErrorKind::bridge_malformed,
                        "bridge: malformed " + out_file.string() + ": " + e.what());
    }
    if (static_cast<std::size_t>(emb.rows.rows()) < count) {
      throw BridgeError(ErrorKind::bridge_incomplete,
                        "bridge: out.idv has " + std::to_string(emb.rows.rows()) + " rows, expected " +
                            std::to_string(count) + "; missing index " +
                            std::to_string(first + static_cast<std::size_t>(emb.rows.rows())),
                        {}, static_cast<long>(first + static_cast<std::size_t>(emb.rows.rows())));
    }
    if (static_cast<std::size_t>(emb.rows.rows()) > count) {
      throw BridgeError(ErrorKind::bridge_malformed, "bridge: out.idv has extra rows");
    }
    if (output.embeddings.size() == 0) {
      output.embeddings.resize(static_cast<Eigen::Index>(n), emb.rows.cols());
    } else if (emb.rows.cols() != output.embeddings.cols()) {
      throw BridgeError(ErrorKind::bridge_malformed, "bridge: embedding dimension changed");
    }
    output.embeddings.middleRows(static_cast<Eigen::Index>(first),
                                 static_cast<Eigen::Index>(count)) = emb.rows;
  }
  return output;
}

BridgeGenerator::BridgeGenerator(BridgeConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.mode = BridgeMode::images;
  cfg_.validate();
}

Image BridgeGenerator::generate(const FeatureVector& v) const {
  Matrix one(1, v.size());
  one.row(0) = v.transpose();
  return std::move(generate_many(one).front());
}

std::vector<Image> BridgeGenerator::generate_many(const Matrix& vectors) const {
  return bridge_generate(cfg_, vectors).images;
}

}  // namespace idforge
