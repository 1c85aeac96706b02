#include "idforge/genbridge.hpp"

#include <string>

#include "idforge/error.hpp"

namespace idforge {

Vector Generator::vjp(const FeatureVector&, const Vector&) const {
  fail(ErrorKind::config, "generator does not provide vector-Jacobian products");
}

std::string_view evaluator_name(EvaluatorKind kind) noexcept {
  switch (kind) {
    case EvaluatorKind::pose: return "pose";
    case EvaluatorKind::quality: return "quality";
    case EvaluatorKind::identity: return "identity";
  }
  return "unknown";
}

Vector random_unit_vector(std::size_t dim, const RngState& rng) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) v[static_cast<Eigen::Index>(i)] = rng.normal_at(i);
  return v / v.norm();
}

ToyGenerator::ToyGenerator(std::size_t dim, const ToyGeneratorConfig& config) : config_(config) {
  const std::size_t p = config.height * config.width;
  if (dim == 0) fail(ErrorKind::config, "ToyGenerator: dim must be > 0");
  if (p < dim) {
    fail(ErrorKind::config, "ToyGenerator: " + std::to_string(config.height) + "x" +
                                std::to_string(config.width) + " image has fewer pixels than dim " +
                                std::to_string(dim));
  }
  if (!(config.gain >= 0.0)) fail(ErrorKind::config, "ToyGenerator: gain must be >= 0");

  const RngState rng{config.seed, 0x70790};
  Eigen::MatrixXd gauss(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(dim));
  for (Eigen::Index c = 0; c < gauss.cols(); ++c) {
    for (Eigen::Index r = 0; r < gauss.rows(); ++r) {
      gauss(r, c) = rng.normal_at(static_cast<std::uint64_t>(c) * p + r);
    }
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(gauss.rows(), gauss.cols());
}

void ToyGenerator::check_image(const Image& image) const {
  if (image.height != config_.height || image.width != config_.width || image.channels != 1) {
    fail(ErrorKind::shape, "toy generator: image is " + std::to_string(image.height) + "x" +
                               std::to_string(image.width) + "x" +
                               std::to_string(image.channels) + ", expected " +
                               std::to_string(config_.height) + "x" +
                               std::to_string(config_.width) + "x1");
  }
}

Image ToyGenerator::generate(const FeatureVector& v) const {
  require_same_length(static_cast<std::size_t>(v.size()), dim(), "toy_generate");
  const double n = norm(as_span(v));
  if (!(n > 0.0)) fail(ErrorKind::domain, "toy_generate: zero vector");
  Image image(config_.height, config_.width, 1);
  image.pixels = (0.5 + config_.gain * (basis_ * (v / n)).array()).matrix();
  image.clamp();
  return image;
}

Vector ToyGenerator::vjp(const FeatureVector& v, const Vector& image_cotangent) const {
  require_same_length(static_cast<std::size_t>(v.size()), dim(), "toy_vjp");
  require_same_length(static_cast<std::size_t>(image_cotangent.size()), pixels(), "toy_vjp");
  const double n = norm(as_span(v));
  if (!(n > 0.0)) fail(ErrorKind::domain, "toy_vjp: zero vector");
  const Vector unit = v / n;
  const Vector raw = (0.5 + config_.gain * (basis_ * unit).array()).matrix();
  Vector masked = image_cotangent;
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    if (!(raw[i] > 0.0 && raw[i] < 1.0)) masked[i] = 0.0;
  }
  const Vector g_unit = config_.gain * (basis_.transpose() * masked);
  return (g_unit - unit * unit.dot(g_unit)) / n;
}

Vector ToyGenerator::pre_embed(const Image& image) const {
  check_image(image);
  if (!(config_.gain > 0.0)) fail(ErrorKind::domain, "toy_embed: gain is zero");
  return basis_.transpose() * ((image.pixels.array() - 0.5) / config_.gain).matrix();
}

FeatureVector ToyGenerator::embed(const Image& image) const {
  const Vector y = pre_embed(image);
  const double n = norm(as_span(y));
  if (!(n > 0.0)) fail(ErrorKind::domain, "toy_embed: image carries no signal");
  return y / n;
}

Vector ToyGenerator::embed_vjp(const Image& image, const Vector& embedding_cotangent) const {
  const Vector y = pre_embed(image);
  const double n = norm(as_span(y));
  if (!(n > 0.0)) fail(ErrorKind::domain, "toy_embed: image carries no signal");
  const Vector e = y / n;
  const Vector g_y = (embedding_cotangent - e * e.dot(embedding_cotangent)) / n;
  return basis_ * g_y / config_.gain;
}

ScalarEvaluator surrogate_pose(const ToyGenerator& gen, const Vector& axis) {
  require_same_length(static_cast<std::size_t>(axis.size()), gen.dim(), "surrogate_pose");
  const Vector u = axis / axis.norm();
  ScalarEvaluator ev;
  ev.value = [&gen, u](const Image& img) { return 90.0 * u.dot(gen.embed(img)); };
  ev.image_gradient = [&gen, u](const Image& img) {
    return Vector(90.0 * gen.embed_vjp(img, u));
  };
  return ev;
}

ScalarEvaluator surrogate_quality(const ToyGenerator& gen, double offset, double scale) {
  ScalarEvaluator ev;
  ev.value = [&gen, offset, scale](const Image& img) {
    return offset + scale * gen.pre_embed(img).norm();
  };
  ev.image_gradient = [&gen, scale](const Image& img) {
    const Vector y = gen.pre_embed(img);
    const double n = y.norm();
    if (!(n > 0.0)) fail(ErrorKind::domain, "surrogate_quality: image carries no signal");
    return Vector(scale * (gen.basis() * (y / n)) / gen.config().gain);
  };
  return ev;
}

IdentityEvaluator toy_identity(const ToyGenerator& gen) {
  IdentityEvaluator ev;
  ev.embed = [&gen](const Image& img) { return gen.embed(img); };
  ev.vjp = [&gen](const Image& img, const Vector& cot) { return gen.embed_vjp(img, cot); };
  return ev;
}

Evaluators surrogate_evaluators(const ToyGenerator& gen, const SurrogateConfig& config) {
  const Vector axis = config.pose_axis.size() > 0
                          ? config.pose_axis
                          : random_unit_vector(gen.dim(), RngState{config.axis_seed, 0xA715});
  Evaluators ev;
  ev.pose = surrogate_pose(gen, axis);
  ev.quality = surrogate_quality(gen, config.quality_offset, config.quality_scale);
  ev.identity = toy_identity(gen);
  return ev;
}

}  // namespace idforge
