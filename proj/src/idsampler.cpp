#include "idforge/idsampler.hpp"

#include <algorithm>
#include <chrono>
#include <string>

#include "idforge/parallel.hpp"

namespace idforge {

void SamplerConfig::validate() const {
  // tau = 0 is accepted so that impossible constraints surface as exhaustion.
  if (!(tau >= 0.0 && tau < 1.0)) {
    fail(ErrorKind::config, "sampler: tau must lie in [0, 1)");
  }
  if (target_count < 1) fail(ErrorKind::config, "sampler: target_count must be >= 1");
  if (candidate_batch < 1) fail(ErrorKind::config, "sampler: candidate_batch must be >= 1");
  if (candidate_limit() < target_count) {
    fail(ErrorKind::config, "sampler: max_candidates must be >= target_count");
  }
}

double IdentityPool::rejection_rate() const {
  const auto seen = accepted() + rejected_;
  return seen ? static_cast<double>(rejected_) / static_cast<double>(seen) : 0.0;
}

Matrix IdentityPool::to_matrix() const {
  Matrix out(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(dim_));
  std::copy(data_.begin(), data_.end(), out.data());
  return out;
}

void IdentityPool::reserve(std::size_t rows) {
  data_.reserve(rows * dim_);
  norms_.reserve(rows);
}

void IdentityPool::append(std::span<const double> v, double v_norm) {
  require_same_length(v.size(), dim_, "IdentityPool::append");
  data_.insert(data_.end(), v.begin(), v.end());
  norms_.push_back(v_norm);
}

bool admit(IdentityPool& pool, std::span<const double> candidate, double tau) {
  const SimilarityHit hit = max_similarity_blocked(candidate, pool.view());
  if (hit.index && hit.value > tau) {
    pool.count_rejection();
    return false;
  }
  pool.append(candidate, norm(candidate));
  return true;
}

SampledIdentities sample_identities(const SamplerConfig& cfg, std::size_t dim,
                                    const CandidateSource& source) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t limit = cfg.candidate_limit();

  auto pool = std::make_shared<IdentityPool>(dim);
  pool->reserve(cfg.target_count);
  SamplingStats stats;
  stats.tau = cfg.tau;
  stats.seed = cfg.seed;

  auto finish_stats = [&] {
    stats.accepted = pool->accepted();
    stats.rejected = pool->rejected();
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  while (pool->size() < cfg.target_count) {
    if (stats.drawn >= limit) {
      finish_stats();
      throw ExhaustionError("sampler: exhausted " + std::to_string(limit) + " candidates with " +
                                std::to_string(pool->size()) + " of " +
                                std::to_string(cfg.target_count) + " identities accepted",
                            pool, stats);
    }
    const std::size_t needed = cfg.target_count - pool->size();
    const std::size_t batch =
        std::min({cfg.candidate_batch, limit - stats.drawn, needed + needed / 16 + 8});

    Matrix cand = source(stats.drawn, batch);
    if (static_cast<std::size_t>(cand.rows()) != batch ||
        static_cast<std::size_t>(cand.cols()) != dim) {
      fail(ErrorKind::shape, "sampler: candidate source returned wrong shape");
    }
    if (cfg.normalize) {
      for (Eigen::Index r = 0; r < cand.rows(); ++r) {
        const double n = norm(row_span(cand, r));
        if (n > 0.0) cand.row(r) /= n;
      }
    }
    if (cfg.float32) cand = cand.cast<float>().cast<double>();
    const std::vector<double> cand_norms = row_norms(cand);
    const RowsView cand_view{cand.data(), cand_norms.data(), batch, dim};

    const std::size_t prefix = pool->size();
    const std::vector<SimilarityHit> vs_prefix = max_similarity_many(cand_view, pool->view());

    for (std::size_t i = 0; i < batch && pool->size() < cfg.target_count; ++i) {
      ++stats.drawn;
      if (vs_prefix[i].index && vs_prefix[i].value > cfg.tau) {
        pool->count_rejection();
        continue;
      }
      const RowsView admitted_here = pool->view().slice(prefix, pool->size() - prefix);
      const SimilarityHit hit = max_similarity_blocked(row_span(cand, i), admitted_here);
      if (hit.index && hit.value > cfg.tau) {
        pool->count_rejection();
        continue;
      }
      pool->append(row_span(cand, i), cand_norms[i]);
    }
  }
  finish_stats();
  return SampledIdentities{std::move(*pool), stats};
}

SampledIdentities sample_identity_vectors(const SamplerConfig& cfg, const PcaModel& model,
                                          const LatentGaussian& latent, const RngState& rng) {
  return sample_identities(cfg, model.dim(), [&](std::size_t first, std::size_t count) {
    return sample_feature_vectors(model, latent, count, rng, first);
  });
}

FilterResult filter_existing(const Matrix& vectors, double tau) {
  if (vectors.rows() < 1) fail(ErrorKind::shape, "filter_existing: need at least one row");
  IdentityPool pool(static_cast<std::size_t>(vectors.cols()));
  pool.reserve(static_cast<std::size_t>(vectors.rows()));
  FilterResult out;
  for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
    if (admit(pool, row_span(vectors, r), tau)) {
      out.kept.push_back(static_cast<std::size_t>(r));
    } else {
      out.dropped.push_back(static_cast<std::size_t>(r));
    }
  }
  return out;
}

}  // namespace idforge
