#include "idforge/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "idforge/error.hpp"
#include "idforge/idv.hpp"

namespace idforge {

namespace fs = std::filesystem;

const ConfigMap& config_defaults() {
  static const ConfigMap defaults = {
      {"seed", ""},
      {"n", "64"},
      {"images_per_id", "50"},
      {"dim", "512"},
      {"pca.k", "0"},
      {"corpus", "synthetic"},
      {"corpus.size", "4096"},
      {"corpus.target_norm", "25"},
      {"corpus.decay", "0.25"},
      {"corpus.mean_norm", "2"},
      {"sampler.tau", "0.3"},
      {"sampler.normalize", "false"},
      {"sampler.candidate_batch", "4096"},
      {"sampler.max_candidates", "0"},
      {"perturb.mixture", "0.3:0.4,0.5:0.4,0.7:0.2"},
      {"perturb.s_min", "0.5"},
      {"perturb.max_resamples", "16"},
      {"perturb.shrink_factor", "0.5"},
      {"perturb.max_shrinks", "8"},
      {"perturb.sigma_is_std", "false"},
      {"perturb.normalize_identity", "false"},
      {"attrop.enabled", "true"},
      {"attrop.targets", "60:20,85:10"},
      {"attrop.quality", "27"},
      {"attrop.iterations", "5"},
      {"attrop.step", "0.05"},
      {"attrop.grad_mode", "analytic"},
      {"attrop.fd_step", "0.001"},
      {"attrop.grad_clip", "1"},
      {"attrop.backtrack", "true"},
      {"attrop.max_halvings", "4"},
      {"attrop.hinge_quality", "false"},
      {"generator", "toy"},
      {"toy.height", "24"},
      {"toy.width", "24"},
      {"toy.gain", "4"},
      {"toy.seed", "1110256"},
      {"surrogate.axis_seed", "41237"},
      {"surrogate.quality_offset", "20"},
      {"surrogate.quality_scale", "7"},
      {"bridge.command", ""},
      {"bridge.work_dir", ""},
      {"bridge.batch_size", "64"},
      {"bridge.timeout", "600"},
      {"qa.outlier", "0.3"},
      {"qa.merge", "0.7"},
      {"qa.separability", "0.4"},
      {"qa.leakage", "0.7"},
      {"qa.impostor_sample", "1000000"},
      {"qa.genuine_cap", "1000000"},
      {"qa.use_id_vectors", "false"},
      {"qa.reference", ""},
  };
  return defaults;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::pair<std::string, std::string> split_assignment(const std::string& line,
                                                     const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) fail(ErrorKind::config, where + ": expected key=value");
  std::string key = trim(line.substr(0, eq));
  std::string value = trim(line.substr(eq + 1));
  if (key.empty()) fail(ErrorKind::config, where + ": empty key");
  if (!config_defaults().count(key)) fail(ErrorKind::config, where + ": unknown key '" + key + "'");
  return {std::move(key), std::move(value)};
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    fail(ErrorKind::config, "config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    fail(ErrorKind::config, "config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::config, "config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::pair<double, double>> parse_pairs(const std::string& key,
                                                   const std::string& text) {
  std::vector<std::pair<double, double>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      fail(ErrorKind::config, "config: " + key + " entries look like a:b, got '" + item + "'");
    }
    out.emplace_back(to_real(key, trim(item.substr(0, colon))),
                     to_real(key, trim(item.substr(colon + 1))));
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return base / p;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const std::string where = "config line " + std::to_string(line_no);
    auto [key, value] = split_assignment(line, where);
    if (!out.emplace(key, value).second) fail(ErrorKind::config, where + ": duplicate key " + key);
  }
  return out;
}

void apply_overrides(ConfigMap& base, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    auto [key, value] = split_assignment(o, "override '" + o + "'");
    base[key] = value;
  }
}

std::vector<SigmaShare> parse_mixture(const std::string& text) {
  std::vector<SigmaShare> out;
  for (const auto& [s, f] : parse_pairs("perturb.mixture", text)) out.push_back({s, f});
  return out;
}

std::vector<AttrOpTarget> parse_attrop_targets(const std::string& text) {
  std::vector<AttrOpTarget> out;
  if (trim(text).empty()) return out;
  for (const auto& [pose, count] : parse_pairs("attrop.targets", text)) {
    if (count < 0 || count != std::floor(count)) {
      fail(ErrorKind::config, "config: attrop.targets counts must be whole numbers");
    }
    out.push_back({pose, static_cast<std::size_t>(count)});
  }
  return out;
}

std::size_t PipelineConfig::attrop_count() const {
  std::size_t n = 0;
  for (const auto& t : attrop_targets) n += t.count;
  return n;
}

void PipelineConfig::validate() const {
  if (identities < 1) fail(ErrorKind::config, "config: n must be >= 1");
  if (dim < 1) fail(ErrorKind::config, "config: dim must be >= 1");
  sampler.validate();
  perturb.validate();
  attrop.validate();
  qa.validate();
  if (planned_images() / identities != images_per_id()) {
    fail(ErrorKind::config, "config: n * images_per_id overflows");
  }
  if (attrop_enabled) {
    if (attrop_count() > images_per_id()) {
      fail(ErrorKind::config, "config: attrop.targets replace " + std::to_string(attrop_count()) +
                                  " variants but images_per_id is " +
                                  std::to_string(images_per_id()));
    }
    if (generator != GeneratorKind::toy && attrop_count() > 0) {
      fail(ErrorKind::config,
           "config: attrop needs differentiable evaluators, only available with generator=toy");
    }
  }
  if (generator == GeneratorKind::toy && toy.height * toy.width < dim) {
    fail(ErrorKind::config, "config: toy image must have at least dim pixels");
  }
  if (generator == GeneratorKind::bridge && bridge.command.empty()) {
    fail(ErrorKind::config, "config: generator=bridge needs bridge.command");
  }
  if (qa_impostor_sample < 1 || qa_genuine_cap < 1) {
    fail(ErrorKind::config, "config: qa pair counts must be >= 1");
  }
}

PipelineConfig build_config(const ConfigMap& values, const fs::path& base_dir) {
  ConfigMap m = config_defaults();
  for (const auto& [k, v] : values) {
    if (!m.count(k)) fail(ErrorKind::config, "config: unknown key '" + k + "'");
    m[k] = v;
  }
  if (m.at("seed").empty()) fail(ErrorKind::config, "config: seed is required");

  auto real = [&](const char* k) { return to_real(k, m.at(k)); };
  auto uint = [&](const char* k) { return to_uint(k, m.at(k)); };
  auto flag = [&](const char* k) { return to_bool(k, m.at(k)); };

  PipelineConfig c;
  c.seed = uint("seed");
  c.identities = uint("n");
  c.dim = uint("dim");
  c.pca_k = uint("pca.k");
  c.corpus = m.at("corpus") == "synthetic" ? "synthetic" : resolve(base_dir, m.at("corpus")).string();
  c.synthetic.count = uint("corpus.size");
  c.synthetic.dim = c.dim;
  c.synthetic.target_norm = real("corpus.target_norm");
  c.synthetic.decay = real("corpus.decay");
  c.synthetic.mean_norm = real("corpus.mean_norm");

  c.sampler.target_count = c.identities;
  c.sampler.tau = real("sampler.tau");
  c.sampler.normalize = flag("sampler.normalize");
  c.sampler.candidate_batch = uint("sampler.candidate_batch");
  c.sampler.max_candidates = uint("sampler.max_candidates");
  c.sampler.seed = c.seed;
  c.sampler.float32 = true;

  c.perturb.mixture = parse_mixture(m.at("perturb.mixture"));
  c.perturb.images_per_id = uint("images_per_id");
  c.perturb.s_min = real("perturb.s_min");
  c.perturb.max_resamples = uint("perturb.max_resamples");
  c.perturb.shrink_factor = real("perturb.shrink_factor");
  c.perturb.max_shrinks = uint("perturb.max_shrinks");
  c.perturb.sigma_is_std = flag("perturb.sigma_is_std");
  c.perturb.normalize_identity = flag("perturb.normalize_identity");

  c.attrop_enabled = flag("attrop.enabled");
  c.attrop_targets = parse_attrop_targets(m.at("attrop.targets"));
  c.attrop.target_quality = real("attrop.quality");
  c.attrop.iterations = uint("attrop.iterations");
  c.attrop.step_size = real("attrop.step");
  const std::string& mode = m.at("attrop.grad_mode");
  if (mode == "analytic") {
    c.attrop.grad_mode = GradMode::analytic;
  } else if (mode == "finite-difference" || mode == "finite_difference") {
    c.attrop.grad_mode = GradMode::finite_difference;
  } else {
    fail(ErrorKind::config, "config: attrop.grad_mode must be analytic or finite-difference");
  }
  c.attrop.fd_step = real("attrop.fd_step");
  c.attrop.grad_clip = real("attrop.grad_clip");
  c.attrop.backtrack = flag("attrop.backtrack");
  c.attrop.max_halvings = uint("attrop.max_halvings");
  c.attrop.hinge_quality = flag("attrop.hinge_quality");

  const std::string& gen = m.at("generator");
  if (gen == "toy") {
    c.generator = GeneratorKind::toy;
  } else if (gen == "bridge") {
    c.generator = GeneratorKind::bridge;
  } else {
    fail(ErrorKind::config, "config: generator must be toy or bridge");
  }
  c.toy.height = uint("toy.height");
  c.toy.width = uint("toy.width");
  c.toy.gain = real("toy.gain");
  c.toy.seed = uint("toy.seed");
  c.pose_axis_seed = uint("surrogate.axis_seed");
  c.quality_offset = real("surrogate.quality_offset");
  c.quality_scale = real("surrogate.quality_scale");

  c.bridge.command = m.at("bridge.command");
  c.bridge.work_dir = resolve(base_dir, m.at("bridge.work_dir"));
  c.bridge.batch_size = uint("bridge.batch_size");
  c.bridge.timeout_seconds = static_cast<int>(uint("bridge.timeout"));
  c.bridge.mode = BridgeMode::images;

  c.qa = {real("qa.outlier"), real("qa.merge"), real("qa.separability"), real("qa.leakage")};
  c.qa_impostor_sample = uint("qa.impostor_sample");
  c.qa_genuine_cap = uint("qa.genuine_cap");
  c.qa_use_id_vectors = flag("qa.use_id_vectors");
  c.qa_reference = resolve(base_dir, m.at("qa.reference")).string();

  c.resolved = std::move(m);
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& file, const std::vector<std::string>& overrides) {
  ConfigMap values = parse_config_text(read_file(file));
  apply_overrides(values, overrides);
  return build_config(values, file.parent_path());
}

nlohmann::json config_json(const PipelineConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : cfg.resolved) j[k] = v;
  return j;
}

std::string config_hash(const PipelineConfig& cfg) {
  const std::string text = config_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace idforge
