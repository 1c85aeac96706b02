#include "idforge/numkit.hpp"

#include <algorithm>
#include <string>

#include "idforge/error.hpp"
#include "idforge/parallel.hpp"

namespace idforge {

namespace {

constexpr std::size_t kLanes = 8;

inline double reduce_lanes(const double* acc) {
  return ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
}

// C candidates x R rows of dot products. Each pair accumulates lane l over
// coordinates l, l+8, l+16, ... with fused multiply-adds and then reduces the
// lanes in a fixed tree, identical to the 1x1 instantiation used by dot().
template <int C, int R>
inline void dot_tile(const double* const* a, const double* const* b, std::size_t dim,
                     double* out) {
  double acc[C][R][kLanes] = {};
  const std::size_t full = dim - dim % kLanes;
  for (std::size_t k = 0; k < full; k += kLanes) {
    for (int c = 0; c < C; ++c) {
      for (int r = 0; r < R; ++r) {
        for (std::size_t l = 0; l < kLanes; ++l) {
          acc[c][r][l] = std::fma(a[c][k + l], b[r][k + l], acc[c][r][l]);
        }
      }
    }
  }
  for (std::size_t l = 0; full + l < dim; ++l) {
    for (int c = 0; c < C; ++c) {
      for (int r = 0; r < R; ++r) {
        acc[c][r][l] = std::fma(a[c][full + l], b[r][full + l], acc[c][r][l]);
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    for (int r = 0; r < R; ++r) out[c * R + r] = reduce_lanes(acc[c][r]);
  }
}

inline void update(SimilarityHit& hit, double value, std::size_t index) {
  if (!hit.index || value > hit.value) {
    hit.value = value;
    hit.index = index;
  }
}

void check_candidate_norm(double n) {
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorKind::domain, "similarity scan: candidate has zero or non-finite norm");
  }
}

// Scans pool rows [first, last) for a group of C candidates.
// With exclude_self, candidate c (global index self + c) skips pool row self + c.
template <int C>
void scan_group(const double* const* cand, const double* cand_norms, const RowsView& pool,
                std::size_t first, std::size_t last, SimilarityHit* hits, bool exclude_self,
                std::size_t self) {
  auto take = [&](int c, double d, std::size_t r) {
    if (exclude_self && self + static_cast<std::size_t>(c) == r) return;
    update(hits[c], cosine_from_dot(d, cand_norms[c], pool.norms[r]), r);
  };
  std::size_t r = first;
  double out[C * 2];
  for (; r + 2 <= last; r += 2) {
    const double* rows[2] = {pool.row(r), pool.row(r + 1)};
    dot_tile<C, 2>(cand, rows, pool.dim, out);
    for (int c = 0; c < C; ++c) {
      take(c, out[c * 2], r);
      take(c, out[c * 2 + 1], r + 1);
    }
  }
  if (r < last) {
    const double* rows[1] = {pool.row(r)};
    dot_tile<C, 1>(cand, rows, pool.dim, out);
    for (int c = 0; c < C; ++c) take(c, out[c], r);
  }
}

}  // namespace

double dot(const double* a, const double* b, std::size_t dim) noexcept {
  double out;
  dot_tile<1, 1>(&a, &b, dim, &out);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "dot");
  return dot(a.data(), b.data(), a.size());
}

double norm(std::span<const double> a) { return std::sqrt(dot(a.data(), a.data(), a.size())); }

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[r] = norm(row_span(m, r));
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require_same_length(a.size(), b.size(), "cosine_similarity");
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) {
    fail(ErrorKind::domain, "cosine_similarity: zero-norm input");
  }
  return cosine_from_dot(dot(a.data(), b.data(), a.size()), na, nb);
}

SimilarityHit max_similarity_blocked(std::span<const double> candidate, const RowsView& pool,
                                     std::size_t block_rows) {
  require_same_length(candidate.size(), pool.dim, "max_similarity_blocked");
  SimilarityHit hit;
  if (pool.rows == 0) return hit;
  const double cn = norm(candidate);
  check_candidate_norm(cn);
  block_rows = std::max<std::size_t>(block_rows, 1);
  const double* cand[1] = {candidate.data()};
  for (std::size_t first = 0; first < pool.rows; first += block_rows) {
    const std::size_t last = std::min(pool.rows, first + block_rows);
    for (std::size_t r = first; r < last; ++r) {
      double d;
      const double* row[1] = {pool.row(r)};
      dot_tile<1, 1>(cand, row, pool.dim, &d);
      update(hit, cosine_from_dot(d, cn, pool.norms[r]), r);
    }
  }
  return hit;
}

std::vector<SimilarityHit> max_similarity_many(const RowsView& candidates, const RowsView& pool,
                                               bool exclude_self) {
  require_same_length(candidates.dim, pool.dim, "max_similarity_many");
  std::vector<SimilarityHit> hits(candidates.rows);
  if (pool.rows == 0 || candidates.rows == 0) return hits;
  for (std::size_t c = 0; c < candidates.rows; ++c) check_candidate_norm(candidates.norms[c]);

  // Pool blocks sized to stay cache resident while a chunk of candidates
  // streams over them; rows are still visited in ascending order per candidate.
  constexpr std::size_t kChunk = 32;
  constexpr std::size_t kPoolBlock = 96;
  const std::size_t chunks = (candidates.rows + kChunk - 1) / kChunk;

  parallel_for(chunks, [&](std::size_t chunk) {
    const std::size_t c0 = chunk * kChunk;
    const std::size_t c1 = std::min(candidates.rows, c0 + kChunk);
    for (std::size_t first = 0; first < pool.rows; first += kPoolBlock) {
      const std::size_t last = std::min(pool.rows, first + kPoolBlock);
      std::size_t c = c0;
      for (; c + 4 <= c1; c += 4) {
        const double* cand[4] = {candidates.row(c), candidates.row(c + 1), candidates.row(c + 2),
                                 candidates.row(c + 3)};
        scan_group<4>(cand, candidates.norms + c, pool, first, last, hits.data() + c,
                      exclude_self, c);
      }
      for (; c < c1; ++c) {
        const double* cand[1] = {candidates.row(c)};
        scan_group<1>(cand, candidates.norms + c, pool, first, last, hits.data() + c,
                      exclude_self, c);
      }
    }
  });
  return hits;
}

MeanCovariance covariance_of(const Matrix& data) {
  const auto n = data.rows();
  if (n < 2) {
    fail(ErrorKind::insufficient_data,
         "covariance_of: need at least 2 rows, got " + std::to_string(n));
  }
  MeanCovariance out;
  out.mean = data.colwise().mean().transpose();
  const Matrix centered = data.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  // Exact symmetry: mirror the lower triangle.
  for (Eigen::Index i = 0; i < out.cov.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < out.cov.cols(); ++j) out.cov(i, j) = out.cov(j, i);
  }
  return out;
}

namespace {

bool try_cholesky(const Matrix& cov, double jitter, Matrix& lower) {
  const Eigen::Index k = cov.rows();
  lower.setZero(k, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    double diag = cov(j, j) + jitter;
    for (Eigen::Index p = 0; p < j; ++p) diag -= lower(j, p) * lower(j, p);
    if (!(diag > 0.0) || !std::isfinite(diag)) return false;
    const double ljj = std::sqrt(diag);
    lower(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < k; ++i) {
      double s = cov(i, j);
      for (Eigen::Index p = 0; p < j; ++p) s -= lower(i, p) * lower(j, p);
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

}  // namespace

CholeskyResult cholesky(const Matrix& cov, const CholeskyOptions& options) {
  if (cov.rows() != cov.cols() || cov.rows() == 0) {
    fail(ErrorKind::shape, "cholesky: matrix must be square and non-empty");
  }
  if (options.jitter < 0.0) fail(ErrorKind::config, "cholesky: jitter must be >= 0");
  const double scale = cov.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < cov.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < cov.cols(); ++j) {
      if (std::abs(cov(i, j) - cov(j, i)) > 1e-12 * std::max(scale, 1e-300)) {
        fail(ErrorKind::domain, "cholesky: matrix is not symmetric");
      }
    }
  }

  const double k = static_cast<double>(cov.rows());
  const double base = std::max(options.relative_base * cov.trace() / k, 10.0 * options.jitter);

  CholeskyResult result;
  double jitter = options.jitter;
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    if (attempt == 1) jitter = base;
    if (attempt > 1) jitter *= 10.0;
    result.attempts = attempt + 1;
    if (try_cholesky(cov, jitter, result.lower)) {
      result.jitter_used = jitter;
      return result;
    }
  }
  fail(ErrorKind::factorization,
       "cholesky: not positive definite after jitter " + std::to_string(jitter));
}

Matrix mvn_sample(const GaussianModel& model, std::size_t count, const RngState& rng,
                  std::size_t first_row) {
  const auto k = model.mean.size();
  if (model.chol.rows() != k || model.chol.cols() != k) {
    fail(ErrorKind::shape, "mvn_sample: chol must be k x k");
  }
  Matrix out(static_cast<Eigen::Index>(count), k);
  constexpr std::size_t kRowsPerTask = 64;
  const std::size_t tasks = (count + kRowsPerTask - 1) / kRowsPerTask;
  parallel_for(tasks, [&](std::size_t task) {
    std::vector<double> z(static_cast<std::size_t>(k));
    const std::size_t r0 = task * kRowsPerTask;
    const std::size_t r1 = std::min(count, r0 + kRowsPerTask);
    for (std::size_t r = r0; r < r1; ++r) {
      const std::uint64_t base = static_cast<std::uint64_t>(first_row + r) * k;
      for (Eigen::Index j = 0; j < k; ++j) z[j] = rng.normal_at(base + j);
      double* row = out.data() + r * k;
      for (Eigen::Index i = 0; i < k; ++i) {
        const double* li = model.chol.data() + i * k;
        row[i] = model.mean[i] + dot(li, z.data(), static_cast<std::size_t>(i + 1));
      }
    }
  });
  return out;
}

}  // namespace idforge
