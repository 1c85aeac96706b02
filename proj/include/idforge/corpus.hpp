#pragma once

#include <cstddef>

#include "idforge/numkit.hpp"

namespace idforge {

/// Stand-in for a corpus of face-recognition features: anisotropic Gaussian
/// with a power-law spectrum (per-dimension std proportional to
/// (i+1)^-decay), expected norm `target_norm`, plus a small common offset.
struct SyntheticCorpusSpec {
  std::size_t count = 4096;
  std::size_t dim = kDefaultDim;
  double target_norm = 25.0;
  double decay = 0.25;
  double mean_norm = 2.0;
};

Matrix synthetic_corpus(const SyntheticCorpusSpec& spec, const RngState& rng);

}  // namespace idforge
