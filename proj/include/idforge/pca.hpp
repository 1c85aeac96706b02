#pragma once

#include <cstddef>

#include "idforge/numkit.hpp"

namespace idforge {

/// Centered orthonormal basis. Rows of `components` are unit, mutually
/// orthogonal, ordered by non-increasing explained variance, with the
/// largest-magnitude entry of each row positive.
struct PcaModel {
  Vector mean;                // d
  Matrix components;          // k x d
  Vector explained_variance;  // k

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t rank() const { return static_cast<std::size_t>(components.rows()); }
};

/// Latent Gaussian over PCA coordinates.
struct LatentGaussian {
  GaussianModel gaussian;
  std::size_t source_count = 0;
  double jitter_used = 0.0;
};

/// Fits the top-k principal directions by SVD of the centered data.
/// k == 0 selects min(n-1, d).
PcaModel pca_fit(const Matrix& data, std::size_t k = 0);

/// components * (v - mean)
Vector pca_transform(const PcaModel& model, std::span<const double> v);
inline Vector pca_transform(const PcaModel& model, const Vector& v) {
  return pca_transform(model, as_span(v));
}
/// mean + components^T * z
Vector pca_inverse(const PcaModel& model, std::span<const double> z);
inline Vector pca_inverse(const PcaModel& model, const Vector& z) {
  return pca_inverse(model, as_span(z));
}

Matrix pca_transform_rows(const PcaModel& model, const Matrix& data);
Matrix pca_inverse_rows(const PcaModel& model, const Matrix& latent);

LatentGaussian latent_gaussian_fit(const PcaModel& model, const Matrix& data);

/// Rows first_row .. first_row+count-1 of the sampled feature stream:
/// pca_inverse of mvn_sample over the latent Gaussian.
Matrix sample_feature_vectors(const PcaModel& model, const LatentGaussian& latent,
                              std::size_t count, const RngState& rng, std::size_t first_row = 0);

}  // namespace idforge
