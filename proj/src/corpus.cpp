#include "idforge/corpus.hpp"

#include "idforge/error.hpp"
#include "idforge/parallel.hpp"

namespace idforge {

Matrix synthetic_corpus(const SyntheticCorpusSpec& spec, const RngState& rng) {
  if (spec.dim == 0 || spec.count == 0) fail(ErrorKind::config, "synthetic_corpus: empty shape");
  const auto d = static_cast<Eigen::Index>(spec.dim);

  Vector stddev(d);
  double total = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    stddev[i] = std::pow(static_cast<double>(i + 1), -spec.decay);
    total += stddev[i] * stddev[i];
  }
  stddev *= spec.target_norm / std::sqrt(total);

  const RngState mean_stream = rng.derive(0);
  Vector offset(d);
  for (Eigen::Index i = 0; i < d; ++i) offset[i] = mean_stream.normal_at(i);
  offset *= spec.mean_norm / offset.norm();

  const RngState rows = rng.derive(1);
  Matrix out(static_cast<Eigen::Index>(spec.count), d);
  parallel_for(spec.count, [&](std::size_t r) {
    for (Eigen::Index i = 0; i < d; ++i) {
      out(r, i) = offset[i] + stddev[i] * rows.normal_at(r * spec.dim + i);
    }
  });
  return out;
}

}  // namespace idforge
