#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "idforge/error.hpp"
#include "idforge/pca.hpp"

namespace idforge {

struct SamplerConfig {
  std::size_t target_count = 1;
  double tau = 0.3;
  std::size_t candidate_batch = 4096;
  /// 0 selects 4 * target_count.
  std::size_t max_candidates = 0;
  std::uint64_t seed = 0;
  /// Normalize candidates to unit length before the similarity test and storage.
  bool normalize = false;
  /// Round candidates to single precision before the admission test, so the
  /// separation guarantee survives storage in 32-bit IDV files.
  bool float32 = false;

  void validate() const;
  std::size_t candidate_limit() const { return max_candidates ? max_candidates : 4 * target_count; }
};

/// Accepted identity vectors in admission order, with cached norms. Rows are
/// stored contiguously so scans read the pool as one block.
class IdentityPool {
 public:
  explicit IdentityPool(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return norms_.size(); }
  std::size_t accepted() const { return size(); }
  std::size_t rejected() const { return rejected_; }
  double rejection_rate() const;

  /// Snapshot over the current rows. Later appends never move rows that a
  /// scan started earlier is reading, provided capacity was reserved.
  RowsView view() const { return {data_.data(), norms_.data(), size(), dim_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  Matrix to_matrix() const;

  void reserve(std::size_t rows);
  void append(std::span<const double> v, double v_norm);
  void count_rejection() { ++rejected_; }

 private:
  std::size_t dim_;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::size_t rejected_ = 0;
};

/// Appends `candidate` iff its maximum cosine against the pool is <= tau.
bool admit(IdentityPool& pool, std::span<const double> candidate, double tau);

struct SamplingStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t drawn = 0;
  double tau = 0.0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;

  double rejection_rate() const {
    const auto seen = accepted + rejected;
    return seen ? static_cast<double>(rejected) / static_cast<double>(seen) : 0.0;
  }
};

/// Raised when max_candidates draws did not yield target_count identities.
class ExhaustionError : public Error {
 public:
  ExhaustionError(const std::string& what, std::shared_ptr<const IdentityPool> partial,
                  SamplingStats stats)
      : Error(ErrorKind::exhaustion, what), partial_(std::move(partial)), stats_(stats) {}

  const IdentityPool& partial_pool() const { return *partial_; }
  const SamplingStats& stats() const { return stats_; }

 private:
  std::shared_ptr<const IdentityPool> partial_;
  SamplingStats stats_;
};

struct SampledIdentities {
  IdentityPool pool;
  SamplingStats stats;
};

/// Source of candidate rows; rows [first, first+count) of a fixed stream.
using CandidateSource = std::function<Matrix(std::size_t first, std::size_t count)>;

/// Greedy first-come admission over a candidate stream. Candidates are
/// generated and scanned in batches, but admitted strictly in stream order, so
/// the pool is independent of batch size and worker count.
SampledIdentities sample_identities(const SamplerConfig& cfg, std::size_t dim,
                                    const CandidateSource& source);

/// Candidate stream drawn from the latent Gaussian under (cfg.seed, stream).
SampledIdentities sample_identity_vectors(const SamplerConfig& cfg, const PcaModel& model,
                                          const LatentGaussian& latent, const RngState& rng);

struct FilterResult {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> dropped;
};

/// Applies the admission rule to externally supplied rows, in row order.
FilterResult filter_existing(const Matrix& vectors, double tau);

}  // namespace idforge
