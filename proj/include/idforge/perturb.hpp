#pragma once

#include <cstddef>
#include <vector>

#include "idforge/numkit.hpp"

namespace idforge {

struct SigmaShare {
  double sigma = 0.0;
  double fraction = 0.0;
};

struct PerturbSpec {
  std::vector<SigmaShare> mixture = {{0.3, 0.40}, {0.5, 0.40}, {0.7, 0.20}};
  std::size_t images_per_id = 50;
  double s_min = 0.5;
  /// Fresh draws tried after the first one before shrinking.
  std::size_t max_resamples = 16;
  double shrink_factor = 0.5;
  std::size_t max_shrinks = 8;
  /// false: sigma is the per-coordinate variance (noise std = sqrt(sigma)).
  bool sigma_is_std = false;
  /// Perturb the unit-normalized identity vector instead of the raw one.
  bool normalize_identity = false;

  void validate() const;
  double noise_std(double sigma) const;
};

/// Variants per mixture entry: round-half-up of fraction * m, with the
/// remainder given to the first largest-fraction entry.
std::vector<std::size_t> sigma_counts(const PerturbSpec& spec);

struct PerturbedSet {
  FeatureVector id_vector;
  Matrix variants;  // m x d, grouped by mixture entry in mixture order
  Vector sigmas;
  Vector similarities;
  std::size_t shrunk = 0;
};

/// variant = v_id + noise, every coordinate i.i.d. N(0, std^2). Variants below
/// s_min are redrawn up to max_resamples times, then shrunk toward v_id.
/// Variant i draws from normal indices [(i*(R+1) + attempt) * d, ...) of `rng`.
PerturbedSet perturb_identity(const FeatureVector& v_id, const PerturbSpec& spec,
                              const RngState& rng);

/// v_id + shrink^i * (v_pert - v_id) for the smallest i in [0, max_shrinks]
/// with cosine >= s_min; constraint error when none qualifies.
FeatureVector enforce_min_similarity(const FeatureVector& v_id, const FeatureVector& v_pert,
                                     double s_min, double shrink_factor, std::size_t max_shrinks);

/// (1-t) a + t b at t = i/(steps-1); the endpoints are exact copies.
std::vector<FeatureVector> interpolate_features(const FeatureVector& a, const FeatureVector& b,
                                                std::size_t steps);

struct DimRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

/// One copy of v per value with coordinates [begin, end) set to that value.
std::vector<FeatureVector> sweep_dimensions(const FeatureVector& v, DimRange dims,
                                            std::span<const double> values);

}  // namespace idforge
