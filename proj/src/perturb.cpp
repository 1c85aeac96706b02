#include "idforge/perturb.hpp"

#include <algorithm>
#include <string>

#include "idforge/error.hpp"

namespace idforge {

void PerturbSpec::validate() const {
  if (mixture.empty()) fail(ErrorKind::config, "perturb: mixture is empty");
  double total = 0.0;
  for (const auto& share : mixture) {
    if (!(share.sigma >= 0.0)) fail(ErrorKind::config, "perturb: sigma must be >= 0");
    if (!(share.fraction >= 0.0)) fail(ErrorKind::config, "perturb: fraction must be >= 0");
    total += share.fraction;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    fail(ErrorKind::config, "perturb: mixture fractions sum to " + std::to_string(total));
  }
  // s_min = 1 is let through; it surfaces as a constraint error per variant.
  if (!(s_min >= 0.0 && s_min <= 1.0)) fail(ErrorKind::config, "perturb: s_min outside [0, 1]");
  if (images_per_id < 1) fail(ErrorKind::config, "perturb: images_per_id must be >= 1");
  if (!(shrink_factor > 0.0 && shrink_factor < 1.0)) {
    fail(ErrorKind::config, "perturb: shrink_factor outside (0, 1)");
  }
}

double PerturbSpec::noise_std(double sigma) const {
  return sigma_is_std ? sigma : std::sqrt(sigma);
}

std::vector<std::size_t> sigma_counts(const PerturbSpec& spec) {
  const auto m = static_cast<long>(spec.images_per_id);
  std::vector<long> counts;
  long assigned = 0;
  std::size_t largest = 0;
  for (std::size_t i = 0; i < spec.mixture.size(); ++i) {
    const long c = static_cast<long>(std::floor(spec.mixture[i].fraction * m + 0.5));
    counts.push_back(c);
    assigned += c;
    if (spec.mixture[i].fraction > spec.mixture[largest].fraction) largest = i;
  }
  counts[largest] += m - assigned;
  if (counts[largest] < 0) fail(ErrorKind::config, "perturb: mixture rounding underflow");
  return {counts.begin(), counts.end()};
}

FeatureVector enforce_min_similarity(const FeatureVector& v_id, const FeatureVector& v_pert,
                                     double s_min, double shrink_factor,
                                     std::size_t max_shrinks) {
  require_same_length(static_cast<std::size_t>(v_id.size()),
                      static_cast<std::size_t>(v_pert.size()), "enforce_min_similarity");
  if (cosine_similarity(v_pert, v_id) >= s_min) return v_pert;
  const FeatureVector delta = v_pert - v_id;
  double gamma = 1.0;
  for (std::size_t i = 1; i <= max_shrinks; ++i) {
    gamma *= shrink_factor;
    FeatureVector candidate = v_id + gamma * delta;
    if (cosine_similarity(candidate, v_id) >= s_min) return candidate;
  }
  fail(ErrorKind::constraint, "perturb: similarity floor " + std::to_string(s_min) +
                                  " unreachable within " + std::to_string(max_shrinks) +
                                  " shrinks");
}

PerturbedSet perturb_identity(const FeatureVector& v_id_in, const PerturbSpec& spec,
                              const RngState& rng) {
  spec.validate();
  const auto d = static_cast<std::size_t>(v_id_in.size());
  const double id_norm = norm(as_span(v_id_in));
  if (!(id_norm > 0.0)) fail(ErrorKind::domain, "perturb_identity: zero identity vector");
  const FeatureVector v_id = spec.normalize_identity ? FeatureVector(v_id_in / id_norm) : v_id_in;

  const auto counts = sigma_counts(spec);
  const std::size_t m = spec.images_per_id;
  PerturbedSet out;
  out.id_vector = v_id;
  out.variants.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  out.sigmas.resize(static_cast<Eigen::Index>(m));
  out.similarities.resize(static_cast<Eigen::Index>(m));

  const std::size_t draws = spec.max_resamples + 1;
  std::size_t i = 0;
  FeatureVector candidate(d);
  // An exact copy (sigma = 0) has similarity 1 without the rounding of the ratio.
  auto similarity = [&] { return candidate == v_id ? 1.0 : cosine_similarity(candidate, v_id); };
  for (std::size_t entry = 0; entry < spec.mixture.size(); ++entry) {
    const double sigma = spec.mixture[entry].sigma;
    const double sd = spec.noise_std(sigma);
    for (std::size_t c = 0; c < counts[entry]; ++c, ++i) {
      bool ok = false;
      for (std::size_t attempt = 0; attempt < draws && !ok; ++attempt) {
        const std::uint64_t base = (static_cast<std::uint64_t>(i) * draws + attempt) * d;
        for (std::size_t j = 0; j < d; ++j) candidate[j] = v_id[j] + sd * rng.normal_at(base + j);
        ok = similarity() >= spec.s_min;
        if (sd == 0.0) break;
      }
      if (!ok) {
        candidate = enforce_min_similarity(v_id, candidate, spec.s_min, spec.shrink_factor,
                                           spec.max_shrinks);
        ++out.shrunk;
      }
      out.variants.row(i) = candidate.transpose();
      out.sigmas[i] = sigma;
      out.similarities[i] = similarity();
    }
  }
  return out;
}

std::vector<FeatureVector> interpolate_features(const FeatureVector& a, const FeatureVector& b,
                                                std::size_t steps) {
  require_same_length(static_cast<std::size_t>(a.size()), static_cast<std::size_t>(b.size()),
                      "interpolate_features");
  if (steps < 2) fail(ErrorKind::config, "interpolate_features: steps must be >= 2");
  std::vector<FeatureVector> out;
  out.reserve(steps);
  out.push_back(a);
  for (std::size_t i = 1; i + 1 < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
    out.push_back((1.0 - t) * a + t * b);
  }
  out.push_back(b);
  return out;
}

std::vector<FeatureVector> sweep_dimensions(const FeatureVector& v, DimRange dims,
                                            std::span<const double> values) {
  const auto d = static_cast<std::size_t>(v.size());
  if (dims.begin > dims.end || dims.end > d) {
    fail(ErrorKind::index, "sweep_dimensions: range [" + std::to_string(dims.begin) + ", " +
                               std::to_string(dims.end) + ") outside [0, " + std::to_string(d) +
                               ")");
  }
  std::vector<FeatureVector> out;
  out.reserve(values.size());
  for (const double value : values) {
    FeatureVector w = v;
    for (std::size_t j = dims.begin; j < dims.end; ++j) w[j] = value;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace idforge
