#pragma once

// End-to-end dataset construction: fit -> sample -> perturb -> attrop ->
// generate -> audit, each stage reading its inputs from the output directory
// so an interrupted run resumes to the same bytes.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "idforge/config.hpp"
#include "idforge/idsampler.hpp"
#include "idforge/pca.hpp"
#include "idforge/perturb.hpp"

namespace idforge {

enum class Stage { fit, sample, perturb, attrop, generate, audit };

std::string_view stage_name(Stage stage) noexcept;

struct RunOptions {
  /// Stop cleanly after this stage (as if the process had been killed at the boundary).
  std::optional<Stage> stop_after;
};

struct DatasetManifest {
  nlohmann::json header;
  std::vector<nlohmann::json> records;  // one per identity, label = index
};

DatasetManifest run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir,
                             const RunOptions& options = {});

std::string encode_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Loads the embeddings referenced by a manifest (paths relative to its directory).
DatasetEmbeddings manifest_embeddings(const DatasetManifest& manifest,
                                      const std::filesystem::path& root);

/// PCA and latent Gaussian models as IDV files tagged "PCA1" / "LGM1".
void write_pca(const std::filesystem::path& path, const PcaModel& model);
PcaModel read_pca(const std::filesystem::path& path);
void write_latent(const std::filesystem::path& path, const LatentGaussian& latent);
LatentGaussian read_latent(const std::filesystem::path& path);

/// Feature corpus named by the config: synthetic or an IDV file.
Matrix load_corpus(const PipelineConfig& cfg);

/// Variant indices replaced by AttrOP for one identity, paired with target pose.
std::vector<std::pair<std::size_t, double>> attrop_assignments(const PipelineConfig& cfg,
                                                               std::size_t identity);

/// Sidecar records: sampling statistics (includes wall time) and per-variant
/// sigma/similarity provenance.
nlohmann::json sampling_stats_json(const SamplingStats& stats);
nlohmann::json perturbed_set_json(const PerturbedSet& set);

/// Exclusive lock on a directory, released on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Named RNG sub-streams of the run seed.
namespace streams {
inline constexpr std::uint64_t corpus = 1;
inline constexpr std::uint64_t sample = 2;
inline constexpr std::uint64_t perturb = 3;
inline constexpr std::uint64_t attrop = 4;
inline constexpr std::uint64_t qa = 5;
}  // namespace streams

}  // namespace idforge
