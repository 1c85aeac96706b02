#pragma once

// Dataset quality analytics over labeled embeddings: verification score
// distributions and EER, intra-class outliers, inter-class merges,
// separability of identity vectors and identity leakage against a reference.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "idforge/numkit.hpp"

namespace idforge {

struct IdentityEmbeddings {
  std::int64_t label = 0;
  Matrix embeddings;  // m_i x d, m_i >= 1
};

class DatasetEmbeddings {
 public:
  DatasetEmbeddings() = default;
  explicit DatasetEmbeddings(std::vector<IdentityEmbeddings> identities);

  const std::vector<IdentityEmbeddings>& identities() const { return identities_; }
  std::size_t identity_count() const { return identities_.size(); }
  std::size_t image_count() const;
  std::size_t dim() const { return dim_; }

  /// Normalized mean embedding of identity i.
  const FeatureVector& centroid(std::size_t i) const { return centroids_[i]; }
  /// Replaces the centroids (e.g. with sampled identity vectors), one per identity.
  void set_identity_features(const Matrix& features);

 private:
  std::vector<IdentityEmbeddings> identities_;
  std::vector<FeatureVector> centroids_;
  std::size_t dim_ = 0;
};

struct QaThresholds {
  double outlier = 0.3;
  double merge = 0.7;
  double separability = 0.4;
  double leakage = 0.7;

  void validate() const;
};

struct ScoreSets {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

inline constexpr std::size_t kDefaultPairCap = 1'000'000;

/// Genuine: every within-identity pair, or genuine_cap uniform draws (with
/// replacement) when there are more. Impostor: impostor_sample uniform draws
/// of cross-identity pairs.
ScoreSets genuine_impostor_scores(const DatasetEmbeddings& ds, std::size_t impostor_sample,
                                  const RngState& rng, std::size_t genuine_cap = kDefaultPairCap);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

/// Accept when score >= threshold. Candidates are the midpoints between
/// consecutive distinct scores plus one threshold below and one above all
/// scores; the candidate minimizing |FAR - FRR| wins (lowest on ties) and
/// eer = (FAR + FRR) / 2 there.
EerResult equal_error_rate(std::span<const double> genuine, std::span<const double> impostor);

/// Fraction of embeddings whose cosine to their identity feature is below threshold.
double intra_class_outlier_rate(const DatasetEmbeddings& ds, double outlier_threshold);

struct MergePair {
  std::int64_t label_a = 0;
  std::int64_t label_b = 0;
  double similarity = 0.0;
};

/// Identity pairs whose features have similarity strictly above threshold,
/// most similar first.
std::vector<MergePair> inter_class_merge_pairs(const DatasetEmbeddings& ds,
                                               double merge_threshold);

/// Rows whose maximum similarity to every other row is below threshold.
std::size_t separability_count(const Matrix& id_vectors, double threshold);

/// separability_count of each prefix of rows [0, t) for t in checkpoints.
std::vector<std::size_t> separability_curve(const Matrix& id_vectors, double threshold,
                                            std::span<const std::size_t> checkpoints);

struct LeakageResult {
  double rate = 0.0;
  std::vector<std::size_t> offending;
};

/// Synthetic rows whose maximum similarity to the reference exceeds threshold.
LeakageResult identity_leakage_rate(const Matrix& synthetic, const Matrix& reference,
                                    double threshold);

struct Histogram {
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::uint64_t> counts;

  std::uint64_t total() const;
};

Histogram make_histogram(std::span<const double> scores, std::size_t bins = 200, double lo = -1.0,
                         double hi = 1.0);

struct QaReport {
  std::size_t identities = 0;
  std::size_t images = 0;
  std::size_t genuine_pairs = 0;
  std::size_t impostor_pairs = 0;
  EerResult eer;
  Histogram genuine_hist;
  Histogram impostor_hist;
  double outlier_rate = 0.0;
  std::vector<MergePair> merge_pairs;
  std::optional<std::size_t> separability_count;
  std::optional<std::size_t> id_vector_count;
  std::optional<double> leakage_rate;
  std::vector<std::size_t> leakage_offending;
  QaThresholds thresholds;
};

struct AuditOptions {
  QaThresholds thresholds;
  std::size_t impostor_sample = kDefaultPairCap;
  std::size_t genuine_cap = kDefaultPairCap;
  std::size_t histogram_bins = 200;
  /// Use these identity vectors instead of embedding centroids for the
  /// intra/inter-class checks (one row per identity).
  std::optional<Matrix> identity_features;
};

/// Runs every check. id_vectors feeds separability, reference feeds leakage
/// (of the identity centroids, or of id_vectors when given).
QaReport audit_dataset(const DatasetEmbeddings& ds, const AuditOptions& options,
                       const RngState& rng, const Matrix* id_vectors = nullptr,
                       const Matrix* reference = nullptr);

nlohmann::json to_json(const QaReport& report);
QaReport report_from_json(const nlohmann::json& j);
std::string render_report(const QaReport& report);
std::string histogram_csv(const Histogram& genuine, const Histogram& impostor);

}  // namespace idforge
