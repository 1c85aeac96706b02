#pragma once

// Deterministic numerical kernels shared by every stage: dense storage,
// similarity scans, covariance, Cholesky and multivariate normal sampling.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "idforge/rng.hpp"

namespace idforge {

/// Row-major so every row is a contiguous feature vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using FeatureVector = Vector;

inline constexpr std::size_t kDefaultDim = 512;

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}
inline std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// Read-only view of contiguous rows with their cached Euclidean norms.
struct RowsView {
  const double* data = nullptr;
  const double* norms = nullptr;
  std::size_t rows = 0;
  std::size_t dim = 0;

  const double* row(std::size_t i) const { return data + i * dim; }
  RowsView slice(std::size_t first, std::size_t count) const {
    return {data + first * dim, norms + first, count, dim};
  }
};

/// Fixed-order dot product. Every similarity in the project goes through this
/// kernel (or the tile kernel, which performs the identical per-pair sequence),
/// so blocked and naive scans agree bit for bit.
double dot(const double* a, const double* b, std::size_t dim) noexcept;
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

std::vector<double> row_norms(const Matrix& m);

/// <a,b> / (|a| |b|), clamped to [-1, 1]. Throws shape on length mismatch and
/// domain on a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
inline double cosine_similarity(const Vector& a, const Vector& b) {
  return cosine_similarity(as_span(a), as_span(b));
}

/// Cosine from a precomputed dot product and norms; same arithmetic as above.
inline double cosine_from_dot(double d, double norm_a, double norm_b) {
  const double c = d / (norm_a * norm_b);
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

struct SimilarityHit {
  double value = -1.0;
  std::optional<std::size_t> index;  // empty for an empty pool
};

/// Maximum cosine of `candidate` over pool rows, lowest index on ties.
/// The result does not depend on `block_rows`.
SimilarityHit max_similarity_blocked(std::span<const double> candidate, const RowsView& pool,
                                     std::size_t block_rows = 1024);

/// max_similarity_blocked for many candidates at once. Register-tiled and
/// parallel over candidate groups; each entry is bitwise equal to the
/// single-candidate scan. With exclude_self, candidate i skips pool row i
/// (for scanning a set against itself).
std::vector<SimilarityHit> max_similarity_many(const RowsView& candidates, const RowsView& pool,
                                               bool exclude_self = false);

struct MeanCovariance {
  Vector mean;
  Matrix cov;
};

/// Column mean and unbiased (n-1) sample covariance of the rows of `data`.
MeanCovariance covariance_of(const Matrix& data);

struct CholeskyOptions {
  double jitter = 0.0;
  int max_retries = 3;
  /// Retry ladder base, as a fraction of trace/k.
  double relative_base = 1e-10;
};

struct CholeskyResult {
  Matrix lower;
  double jitter_used = 0.0;
  int attempts = 0;
};

/// Lower-triangular L with L L^T = cov + jitter_used * I. On failure the
/// jitter escalates: max(base, 10*jitter) then x10 per retry, where
/// base = relative_base * trace / k. Throws factorization when every attempt fails.
CholeskyResult cholesky(const Matrix& cov, const CholeskyOptions& options = {});

struct GaussianModel {
  Vector mean;
  Matrix chol;  // lower triangular

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Rows first_row .. first_row+count-1 of the infinite sample stream
/// mean + chol * z. Row r uses normal indices [r*k, (r+1)*k) of `rng`, so any
/// slice of the stream is reproducible on its own.
Matrix mvn_sample(const GaussianModel& model, std::size_t count, const RngState& rng,
                  std::size_t first_row = 0);

}  // namespace idforge
