#pragma once

// Pipeline configuration: a flat key=value text file ('#' starts a comment)
// plus key=value overrides. Every key has a default except seed.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "idforge/attrop.hpp"
#include "idforge/bridge.hpp"
#include "idforge/corpus.hpp"
#include "idforge/genbridge.hpp"
#include "idforge/idsampler.hpp"
#include "idforge/perturb.hpp"
#include "idforge/qa.hpp"

namespace idforge {

using ConfigMap = std::map<std::string, std::string>;

/// Every recognised key with its default value ("" for seed: required).
const ConfigMap& config_defaults();

/// Parses key=value lines. Unknown keys, duplicates and malformed lines are
/// config errors naming the line.
ConfigMap parse_config_text(const std::string& text);

/// Applies "key=value" overrides on top of `base`.
void apply_overrides(ConfigMap& base, const std::vector<std::string>& overrides);

struct AttrOpTarget {
  double pose = 0.0;
  std::size_t count = 0;
};

enum class GeneratorKind { toy, bridge };

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t identities = 64;
  std::size_t dim = kDefaultDim;
  std::size_t pca_k = 0;  // 0 = full rank
  std::string corpus = "synthetic";  // or a path to an IDV feature file
  SyntheticCorpusSpec synthetic;
  SamplerConfig sampler;
  PerturbSpec perturb;
  bool attrop_enabled = true;
  std::vector<AttrOpTarget> attrop_targets = {{60.0, 20}, {85.0, 10}};
  AttrOpConfig attrop;
  GeneratorKind generator = GeneratorKind::toy;
  ToyGeneratorConfig toy;
  std::uint64_t pose_axis_seed = 0xA115;
  double quality_offset = 20.0;
  double quality_scale = 7.0;
  BridgeConfig bridge;
  QaThresholds qa;
  std::size_t qa_impostor_sample = kDefaultPairCap;
  std::size_t qa_genuine_cap = kDefaultPairCap;
  bool qa_use_id_vectors = false;
  std::string qa_reference;  // optional IDV file for the leakage check

  /// The fully resolved key/value set this config was built from.
  ConfigMap resolved;

  std::size_t images_per_id() const { return perturb.images_per_id; }
  std::size_t planned_images() const { return identities * images_per_id(); }
  std::size_t attrop_count() const;
  void validate() const;
};

/// Builds a typed config from defaults + `values`. Relative paths in the
/// config (corpus, bridge.work_dir, qa.reference) resolve against `base_dir`.
PipelineConfig build_config(const ConfigMap& values, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& file,
                           const std::vector<std::string>& overrides = {});

nlohmann::json config_json(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

std::vector<SigmaShare> parse_mixture(const std::string& text);
std::vector<AttrOpTarget> parse_attrop_targets(const std::string& text);

}  // namespace idforge
