#pragma once

#include <cstddef>
#include <cstdint>

#include "idforge/generator.hpp"

namespace idforge {

struct ToyGeneratorConfig {
  std::size_t height = 24;
  std::size_t width = 24;
  /// Pixel excursions are gain * (W v_hat)_i, i.e. about gain / sqrt(p) rms.
  double gain = 4.0;
  std::uint64_t seed = 0x10F0F0;
};

/// Analytic stand-in for a neural decoder and FR model: an orthonormal linear
/// map W (p x d, p = height*width >= d) from the unit sphere to a grayscale
/// image, and its pseudo-inverse as the embedder.
///
///   generate(v) = clamp(0.5 + gain * W v/|v|, 0, 1)
///   embed(img)  = normalize(W^T (pixels - 0.5) / gain)
class ToyGenerator final : public Generator {
 public:
  ToyGenerator(std::size_t dim, const ToyGeneratorConfig& config = {});

  std::size_t dim() const { return static_cast<std::size_t>(basis_.cols()); }
  std::size_t pixels() const { return static_cast<std::size_t>(basis_.rows()); }
  const ToyGeneratorConfig& config() const { return config_; }
  const Eigen::MatrixXd& basis() const { return basis_; }

  Image generate(const FeatureVector& v) const override;
  bool has_vjp() const override { return true; }
  /// Exact VJP through normalization, the linear map and the clamp mask
  /// (clamped pixels pass no gradient).
  Vector vjp(const FeatureVector& v, const Vector& image_cotangent) const override;

  /// Unnormalized embedding W^T (pixels - 0.5) / gain.
  Vector pre_embed(const Image& image) const;
  FeatureVector embed(const Image& image) const;
  /// Pulls an embedding cotangent back to pixels through embed().
  Vector embed_vjp(const Image& image, const Vector& embedding_cotangent) const;

 private:
  void check_image(const Image& image) const;

  ToyGeneratorConfig config_;
  Eigen::MatrixXd basis_;  // p x d, orthonormal columns
};

inline Image toy_generate(const ToyGenerator& gen, const FeatureVector& v) {
  return gen.generate(v);
}
inline FeatureVector toy_embed(const ToyGenerator& gen, const Image& image) {
  return gen.embed(image);
}
inline Vector toy_vjp(const ToyGenerator& gen, const FeatureVector& v, const Vector& cotangent) {
  return gen.vjp(v, cotangent);
}

struct SurrogateConfig {
  /// Unit direction the pose surrogate reads; random when empty.
  Vector pose_axis;
  std::uint64_t axis_seed = 0xA115;
  double quality_offset = 20.0;
  double quality_scale = 7.0;
};

/// pose(img) = 90 * <u, embed(img)> degrees.
ScalarEvaluator surrogate_pose(const ToyGenerator& gen, const Vector& axis);
/// quality(img) = offset + scale * |pre_embed(img)|.
ScalarEvaluator surrogate_quality(const ToyGenerator& gen, double offset, double scale);
IdentityEvaluator toy_identity(const ToyGenerator& gen);

/// All three evaluators over the toy pair, with analytic image gradients.
/// The generator must outlive the returned callables.
Evaluators surrogate_evaluators(const ToyGenerator& gen, const SurrogateConfig& config = {});

Vector random_unit_vector(std::size_t dim, const RngState& rng);

}  // namespace idforge
