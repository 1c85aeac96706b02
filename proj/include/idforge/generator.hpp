#pragma once

#include <functional>
#include <optional>
#include <string_view>

#include "idforge/image.hpp"

namespace idforge {

/// Vector -> image renderer. Implementations must be safe for concurrent
/// const use.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual Image generate(const FeatureVector& v) const = 0;

  /// Whether vjp() is available for analytic gradients.
  virtual bool has_vjp() const { return false; }
  /// Vector-Jacobian product of generate() at v for a flattened image cotangent.
  virtual Vector vjp(const FeatureVector& v, const Vector& image_cotangent) const;
};

enum class EvaluatorKind { pose, quality, identity };

std::string_view evaluator_name(EvaluatorKind kind) noexcept;

/// Scalar image attribute (pose in degrees, quality score).
struct ScalarEvaluator {
  std::function<double(const Image&)> value;
  /// d value / d pixels, flattened like Image::pixels; empty when the
  /// evaluator is a black box.
  std::function<Vector(const Image&)> image_gradient;

  bool differentiable() const { return static_cast<bool>(image_gradient); }
};

/// Face-recognition embedder.
struct IdentityEvaluator {
  std::function<FeatureVector(const Image&)> embed;
  /// Pulls an embedding cotangent back to a pixel cotangent.
  std::function<Vector(const Image&, const Vector&)> vjp;

  bool differentiable() const { return static_cast<bool>(vjp); }
};

struct Evaluators {
  std::optional<ScalarEvaluator> pose;
  std::optional<ScalarEvaluator> quality;
  std::optional<IdentityEvaluator> identity;
};

}  // namespace idforge
