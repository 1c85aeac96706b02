#include <doctest.h>

#include "helpers.hpp"
#include "idforge/corpus.hpp"
#include "idforge/idsampler.hpp"
#include "idforge/parallel.hpp"

using namespace idforge;
using testutil::gaussian_matrix;

namespace {

Vector basis(Eigen::Index d, Eigen::Index i) {
  Vector v = Vector::Zero(d);
  v[i] = 1.0;
  return v;
}

// Independent O(n^2) audit: largest pairwise cosine in extended precision.
double max_pair_cosine(const Matrix& m) {
  double best = -1.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.rows(); ++j) {
      best = std::max(best, testutil::ref_cosine(m.data() + i * m.cols(), m.data() + j * m.cols(),
                                                 static_cast<std::size_t>(m.cols())));
    }
  }
  return best;
}

struct Models {
  PcaModel pca;
  LatentGaussian lg;
};

const Models& corpus_models() {
  static const Models m = [] {
    const Matrix corpus = synthetic_corpus({3000, 512, 25.0, 0.25, 2.0}, RngState{77, 0});
    Models out;
    out.pca = pca_fit(corpus);
    out.lg = latent_gaussian_fit(out.pca, corpus);
    return out;
  }();
  return m;
}

}  // namespace

TEST_CASE("admit examples") {
  IdentityPool pool(8);
  CHECK(admit(pool, as_span(basis(8, 0)), 0.3));
  CHECK_FALSE(admit(pool, as_span(basis(8, 0)), 0.3));
  CHECK(pool.accepted() == 1);
  CHECK(pool.rejected() == 1);
  CHECK(pool.rejection_rate() == 0.5);

  Vector c = Vector::Zero(8);
  c[0] = 0.29;
  c[1] = std::sqrt(1.0 - 0.29 * 0.29);
  IdentityPool a(8), b(8);
  admit(a, as_span(basis(8, 0)), 0.3);
  admit(b, as_span(basis(8, 0)), 0.28);
  CHECK(admit(a, as_span(c), 0.3));
  CHECK_FALSE(admit(b, as_span(c), 0.28));
  CHECK(a.row(1)[1] == c[1]);

  // Inclusive: similarity exactly tau is admitted.
  Vector half = Vector::Zero(8);
  half[0] = 1.0;
  half[1] = 1.0;  // cos with e1 = 1/sqrt2
  IdentityPool p(8);
  admit(p, as_span(basis(8, 0)), 0.3);
  CHECK(admit(p, as_span(half), cosine_similarity(half, basis(8, 0))));

  IdentityPool wrong(8);
  CHECK_THROWS_AS(admit(wrong, as_span(basis(4, 0)), 0.3), Error);
}

TEST_CASE("filter_existing matches a brute-force greedy oracle") {
  Matrix m(3, 4);
  m << 1, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0;
  FilterResult r = filter_existing(m, 0.3);
  CHECK(r.kept == std::vector<std::size_t>{0, 1});
  CHECK(r.dropped == std::vector<std::size_t>{2});
  CHECK(filter_existing(Matrix::Identity(5, 5), 0.3).kept.size() == 5);

  // Correlated rows so that the filter actually drops some.
  Matrix rows = gaussian_matrix(1000, 512, 3);
  rows.rowwise() += 0.45 * Vector::Ones(512).transpose();
  r = filter_existing(rows, 0.3);
  std::vector<std::size_t> kept;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    bool ok = true;
    for (const std::size_t j : kept) {
      if (testutil::ref_cosine(rows.data() + i * 512, rows.data() + j * 512, 512) > 0.3) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(static_cast<std::size_t>(i));
  }
  CHECK(r.kept == kept);
  CHECK(r.kept.size() + r.dropped.size() == 1000);
  CHECK_FALSE(r.dropped.empty());
}

TEST_CASE("sampled pools satisfy the separation post-condition") {
  const Models& m = corpus_models();
  SamplerConfig cfg;
  cfg.target_count = 2000;
  cfg.tau = 0.3;
  const SampledIdentities s = sample_identity_vectors(cfg, m.pca, m.lg, RngState{5, 2});
  CHECK(s.pool.size() == 2000);
  CHECK(s.stats.accepted == 2000);
  CHECK(s.stats.accepted + s.stats.rejected == s.stats.drawn);
  CHECK(max_pair_cosine(s.pool.to_matrix()) <= 0.3);
  const auto norms = row_norms(s.pool.to_matrix());
  for (std::size_t i = 0; i < norms.size(); ++i) {
    CHECK(std::abs(norms[i] - s.pool.view().norms[i]) <= 1e-12 * norms[i]);
  }
}

TEST_CASE("sampling is independent of batch size and thread count") {
  const Models& m = corpus_models();
  SamplerConfig cfg;
  cfg.target_count = 600;
  cfg.tau = 0.2;  // tight enough to force rejections
  cfg.max_candidates = 100000;
  set_worker_count(1);
  cfg.candidate_batch = 4096;
  const SampledIdentities a = sample_identity_vectors(cfg, m.pca, m.lg, RngState{6, 0});
  set_worker_count(4);
  cfg.candidate_batch = 37;
  const SampledIdentities b = sample_identity_vectors(cfg, m.pca, m.lg, RngState{6, 0});
  cfg.candidate_batch = 1;
  const SampledIdentities c = sample_identity_vectors(cfg, m.pca, m.lg, RngState{6, 0});
  set_worker_count(0);
  CHECK(a.stats.rejected > 0);
  CHECK(a.pool.to_matrix() == b.pool.to_matrix());
  CHECK(a.pool.to_matrix() == c.pool.to_matrix());
  CHECK(a.stats.rejected == b.stats.rejected);
  CHECK(a.stats.drawn == c.stats.drawn);

  // Same stream through the one-at-a-time admit() reference.
  IdentityPool ref(m.pca.dim());
  const Matrix stream = sample_feature_vectors(m.pca, m.lg, a.stats.drawn, RngState{6, 0});
  for (Eigen::Index r = 0; r < stream.rows(); ++r) admit(ref, row_span(stream, r), cfg.tau);
  CHECK(ref.to_matrix() == a.pool.to_matrix());
  CHECK(ref.rejected() == a.stats.rejected);
}

TEST_CASE("lowering tau never raises acceptance on the same stream") {
  const Models& m = corpus_models();
  const Matrix stream = sample_feature_vectors(m.pca, m.lg, 800, RngState{8, 0});
  std::size_t prev = stream.rows() + 1;
  for (const double tau : {0.3, 0.2, 0.15, 0.1, 0.05}) {
    const std::size_t kept = filter_existing(stream, tau).kept.size();
    CHECK(kept <= prev);
    prev = kept;
  }
}

TEST_CASE("small isotropic case and exhaustion") {
  // Isotropic latent Gaussian in d=512: three draws are all nearly orthogonal.
  PcaModel pca;
  pca.mean = Vector::Zero(512);
  pca.components = Matrix::Identity(512, 512);
  pca.explained_variance = Vector::Ones(512);
  LatentGaussian lg;
  lg.gaussian = {Vector::Zero(512), Matrix::Identity(512, 512)};
  SamplerConfig cfg;
  cfg.target_count = 3;
  const SampledIdentities s = sample_identity_vectors(cfg, pca, lg, RngState{1, 0});
  CHECK(s.pool.size() == 3);
  CHECK(s.stats.rejection_rate() == 0.0);

  // Shared positive offset: every pair has positive cosine, so tau = 0 is unreachable.
  lg.gaussian.mean = Vector::Constant(512, 3.0);
  cfg.target_count = 5;
  cfg.tau = 0.0;
  cfg.max_candidates = 200;
  try {
    sample_identity_vectors(cfg, pca, lg, RngState{1, 0});
    FAIL("expected exhaustion");
  } catch (const ExhaustionError& e) {
    CHECK(e.kind() == ErrorKind::exhaustion);
    CHECK(e.partial_pool().size() == 1);
    CHECK(e.stats().drawn == 200);
    CHECK(e.stats().rejected == 199);
  }

  cfg.tau = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.tau = 0.3;
  cfg.max_candidates = 2;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("float32 mode admits exactly representable vectors") {
  const Models& m = corpus_models();
  SamplerConfig cfg;
  cfg.target_count = 300;
  cfg.float32 = true;
  const Matrix pool = sample_identity_vectors(cfg, m.pca, m.lg, RngState{2, 0}).pool.to_matrix();
  CHECK(pool == pool.cast<float>().cast<double>());
  CHECK(max_pair_cosine(pool) <= 0.3);
}
