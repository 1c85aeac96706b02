#include "idforge/pca.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "idforge/error.hpp"
#include "idforge/parallel.hpp"

namespace idforge {

PcaModel pca_fit(const Matrix& data, std::size_t k) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  if (n < 2) fail(ErrorKind::insufficient_data, "pca_fit: need at least 2 rows");
  const std::size_t max_k = std::min(n - 1, d);
  if (k == 0) k = max_k;
  if (k > max_k) {
    fail(ErrorKind::config, "pca_fit: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(max_k) + "]");
  }

  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = (data.rowwise() - model.mean.transpose());
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();

  const double tol = static_cast<double>(std::max(n, d)) *
                     std::numeric_limits<double>::epsilon() * (s.size() ? s[0] : 0.0);
  std::size_t achievable = 0;
  while (achievable < static_cast<std::size_t>(s.size()) && s[achievable] > tol &&
         s[achievable] > 0.0) {
    ++achievable;
  }
  if (achievable < k) {
    throw RankError("pca_fit: data supports rank " + std::to_string(achievable) +
                        ", requested k=" + std::to_string(k),
                    achievable);
  }

  const auto kk = static_cast<Eigen::Index>(k);
  model.components = svd.matrixV().leftCols(kk).transpose();
  model.explained_variance = s.head(kk).array().square() / static_cast<double>(n - 1);

  for (Eigen::Index r = 0; r < kk; ++r) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index c = 0; c < model.components.cols(); ++c) {
      const double a = std::abs(model.components(r, c));
      if (a > best) {
        best = a;
        arg = c;
      }
    }
    if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
  }
  return model;
}

Vector pca_transform(const PcaModel& model, std::span<const double> v) {
  require_same_length(v.size(), model.dim(), "pca_transform");
  const std::size_t d = model.dim();
  std::vector<double> centered(d);
  for (std::size_t j = 0; j < d; ++j) centered[j] = v[j] - model.mean[j];
  Vector z(model.components.rows());
  for (Eigen::Index c = 0; c < z.size(); ++c) {
    z[c] = dot(model.components.data() + c * d, centered.data(), d);
  }
  return z;
}

namespace {

void inverse_into(const PcaModel& model, const double* z, double* out) {
  const std::size_t d = model.dim();
  for (std::size_t j = 0; j < d; ++j) out[j] = model.mean[j];
  for (Eigen::Index c = 0; c < model.components.rows(); ++c) {
    const double zc = z[c];
    const double* comp = model.components.data() + c * d;
    for (std::size_t j = 0; j < d; ++j) out[j] += zc * comp[j];
  }
}

}  // namespace

Vector pca_inverse(const PcaModel& model, std::span<const double> z) {
  require_same_length(z.size(), model.rank(), "pca_inverse");
  Vector out(model.dim());
  inverse_into(model, z.data(), out.data());
  return out;
}

Matrix pca_transform_rows(const PcaModel& model, const Matrix& data) {
  require_same_length(static_cast<std::size_t>(data.cols()), model.dim(), "pca_transform_rows");
  Matrix out(data.rows(), model.components.rows());
  parallel_for(static_cast<std::size_t>(data.rows()), [&](std::size_t r) {
    out.row(r) = pca_transform(model, row_span(data, r)).transpose();
  });
  return out;
}

Matrix pca_inverse_rows(const PcaModel& model, const Matrix& latent) {
  require_same_length(static_cast<std::size_t>(latent.cols()), model.rank(), "pca_inverse_rows");
  Matrix out(latent.rows(), static_cast<Eigen::Index>(model.dim()));
  parallel_for(static_cast<std::size_t>(latent.rows()), [&](std::size_t r) {
    inverse_into(model, latent.data() + r * latent.cols(), out.data() + r * out.cols());
  });
  return out;
}

LatentGaussian latent_gaussian_fit(const PcaModel& model, const Matrix& data) {
  if (data.rows() < 2) {
    fail(ErrorKind::insufficient_data, "latent_gaussian_fit: need at least 2 rows");
  }
  const Matrix latent = pca_transform_rows(model, data);
  const MeanCovariance mc = covariance_of(latent);
  const CholeskyResult chol = cholesky(mc.cov);
  LatentGaussian lg;
  lg.gaussian.mean = mc.mean;
  lg.gaussian.chol = chol.lower;
  lg.source_count = static_cast<std::size_t>(data.rows());
  lg.jitter_used = chol.jitter_used;
  return lg;
}

Matrix sample_feature_vectors(const PcaModel& model, const LatentGaussian& latent,
                              std::size_t count, const RngState& rng, std::size_t first_row) {
  require_same_length(latent.gaussian.dim(), model.rank(), "sample_feature_vectors");
  return pca_inverse_rows(model, mvn_sample(latent.gaussian, count, rng, first_row));
}

}  // namespace idforge
