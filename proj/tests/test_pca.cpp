#include <doctest.h>

#include "helpers.hpp"
#include "idforge/corpus.hpp"
#include "idforge/error.hpp"
#include "idforge/pca.hpp"

using namespace idforge;
using testutil::gaussian_matrix;

TEST_CASE("full-rank round trip and orthonormal components") {
  const Matrix data = gaussian_matrix(200, 40, 1, 2.0);
  const PcaModel m = pca_fit(data, 40);
  CHECK(m.rank() == 40);
  const Matrix gram = m.components * m.components.transpose();
  CHECK((gram - Matrix::Identity(40, 40)).cwiseAbs().maxCoeff() < 1e-8);
  const Matrix back = pca_inverse_rows(m, pca_transform_rows(m, data));
  CHECK((back - data).norm() / data.norm() < 1e-6);
  for (Eigen::Index i = 1; i < 40; ++i) {
    CHECK(m.explained_variance[i] <= m.explained_variance[i - 1]);
  }
}

TEST_CASE("points on a line give one component along it") {
  // Three points x = t * dir for t = -1, 0, 2: variance of t is 7/3.
  Vector dir(3);
  dir << 1, 2, 2;
  dir /= 3.0;
  Matrix data(3, 3);
  data.row(0) = -dir.transpose();
  data.row(1).setZero();
  data.row(2) = 2.0 * dir.transpose();
  const PcaModel m = pca_fit(data, 1);
  CHECK(std::abs(m.components.row(0).dot(dir.transpose())) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.explained_variance[0] == doctest::Approx(7.0 / 3.0).epsilon(1e-12));
  // Sign convention: largest-magnitude entry positive.
  CHECK(m.components(0, 1) > 0.0);
}

TEST_CASE("standard basis rows") {
  const Matrix data = Matrix::Identity(6, 6);
  const PcaModel m = pca_fit(data);
  CHECK(m.rank() == 5);
  const Matrix gram = m.components * m.components.transpose();
  CHECK((gram - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("transform and inverse on single vectors match the row versions") {
  const Matrix data = gaussian_matrix(50, 12, 3);
  const PcaModel m = pca_fit(data, 8);
  const Matrix z = pca_transform_rows(m, data);
  for (Eigen::Index r = 0; r < 5; ++r) {
    const Vector zr = pca_transform(m, row_span(data, r));
    CHECK(zr == z.row(r).transpose());
    // Independent reference: W (x - mean).
    const Vector ref = m.components * (data.row(r).transpose() - m.mean);
    CHECK((zr - ref).norm() < 1e-12 * (1.0 + ref.norm()));
    const Vector xr = pca_inverse(m, zr);
    CHECK((xr - (m.mean + m.components.transpose() * zr)).norm() < 1e-12 * xr.norm());
  }
}

TEST_CASE("errors: k range and rank") {
  const Matrix data = gaussian_matrix(10, 4, 5);
  try {
    pca_fit(data, 5);
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
  Matrix line = Matrix::Zero(10, 4);
  for (Eigen::Index i = 0; i < 10; ++i) line(i, 0) = static_cast<double>(i);
  try {
    pca_fit(line, 3);
    FAIL("expected rank error");
  } catch (const RankError& e) {
    CHECK(e.kind() == ErrorKind::rank);
    CHECK(e.achievable_rank() == 1);
  }
  CHECK_THROWS_AS(pca_fit(Matrix::Constant(5, 3, 2.0), 1), RankError);
  CHECK_THROWS_AS(pca_fit(gaussian_matrix(1, 3, 1)), Error);
}

TEST_CASE("latent Gaussian reproduces the corpus covariance") {
  const Matrix corpus = synthetic_corpus({3000, 32, 10.0, 0.25, 1.0}, RngState{4, 0});
  const PcaModel m = pca_fit(corpus);
  const LatentGaussian lg = latent_gaussian_fit(m, corpus);
  CHECK(lg.source_count == 3000);
  const Matrix samples = sample_feature_vectors(m, lg, 50000, RngState{4, 1});
  const MeanCovariance want = covariance_of(corpus);
  const MeanCovariance got = covariance_of(samples);
  CHECK((got.cov - want.cov).norm() / want.cov.norm() < 0.10);
  CHECK((got.mean - want.mean).norm() < 0.05 * want.mean.norm() + 0.1);

  // Slices of the sample stream are reproducible on their own.
  const Matrix part = sample_feature_vectors(m, lg, 10, RngState{4, 1}, 100);
  CHECK(part == samples.middleRows(100, 10));
}

TEST_CASE("synthetic corpus shape and scale") {
  const Matrix c = synthetic_corpus({2000, 64, 25.0, 0.25, 2.0}, RngState{9, 0});
  CHECK(c.rows() == 2000);
  CHECK(c.cols() == 64);
  double mean_norm = 0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) mean_norm += c.row(i).norm();
  mean_norm /= 2000;
  CHECK(mean_norm == doctest::Approx(25.0).epsilon(0.1));
  CHECK(synthetic_corpus({20, 8}, RngState{9, 0}) == synthetic_corpus({20, 8}, RngState{9, 0}));
}
