#include "idforge/attrop.hpp"

#include <bit>
#include <cmath>
#include <cstdio>

#include "idforge/error.hpp"

namespace idforge {

void AttrOpConfig::validate() const {
  if (!(step_size > 0.0)) fail(ErrorKind::config, "attrop: step_size must be > 0");
  if (!(fd_step > 0.0)) fail(ErrorKind::config, "attrop: fd_step must be > 0");
  if (!(grad_clip > 0.0)) fail(ErrorKind::config, "attrop: grad_clip must be > 0");
}

namespace {

struct Evaluated {
  LossTerms loss;
  double pose = 0.0;
  double quality = 0.0;
  double identity_cosine = 0.0;
};

void require_evaluators(const Evaluators& ev) {
  if (!ev.pose) fail(ErrorKind::config, "attrop: missing pose evaluator");
  if (!ev.quality) fail(ErrorKind::config, "attrop: missing quality evaluator");
  if (!ev.identity) fail(ErrorKind::config, "attrop: missing identity evaluator");
}

Evaluated evaluate(const Image& image, const FeatureVector& v_id, const Evaluators& ev,
                   const AttrOpConfig& cfg) {
  require_evaluators(ev);
  Evaluated out;
  out.identity_cosine = cosine_similarity(ev.identity->embed(image), v_id);
  out.quality = ev.quality->value(image);
  out.pose = ev.pose->value(image);
  out.loss.id = 1.0 - out.identity_cosine;
  out.loss.quality = cfg.target_quality - out.quality;
  if (cfg.hinge_quality) out.loss.quality = std::max(0.0, out.loss.quality);
  out.loss.pose = std::abs(cfg.target_pose - std::abs(out.pose));
  out.loss.total = out.loss.id + out.loss.quality + out.loss.pose;
  return out;
}

// sign with sign(0) = 0: the subgradient chosen at the kinks of |.|
double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace

LossTerms attrop_loss(const Image& image, const FeatureVector& v_id, const Evaluators& evaluators,
                      const AttrOpConfig& cfg) {
  return evaluate(image, v_id, evaluators, cfg).loss;
}

Vector attrop_gradient(const FeatureVector& v, const FeatureVector& v_id,
                       const Generator& generator, const Evaluators& ev,
                       const AttrOpConfig& cfg) {
  require_evaluators(ev);
  if (!generator.has_vjp()) {
    fail(ErrorKind::config, "attrop: analytic gradients need a generator with VJP");
  }
  if (!ev.pose->differentiable() || !ev.quality->differentiable() ||
      !ev.identity->differentiable()) {
    fail(ErrorKind::config, "attrop: analytic gradients need differentiable evaluators");
  }
  const Image image = generator.generate(v);

  // L_id through the embedding.
  const FeatureVector e = ev.identity->embed(image);
  const double e_norm = e.norm();
  const double id_norm = v_id.norm();
  if (!(e_norm > 0.0) || !(id_norm > 0.0)) {
    fail(ErrorKind::domain, "attrop: zero embedding or identity vector");
  }
  const double cos = e.dot(v_id) / (e_norm * id_norm);
  const Vector d_embedding = -(v_id / (id_norm * e_norm) - cos * e / (e_norm * e_norm));
  Vector image_cot = ev.identity->vjp(image, d_embedding);

  const double quality = ev.quality->value(image);
  const double d_quality = (cfg.hinge_quality && cfg.target_quality - quality <= 0.0) ? 0.0 : -1.0;
  if (d_quality != 0.0) image_cot += d_quality * ev.quality->image_gradient(image);

  const double pose = ev.pose->value(image);
  const double d_pose = -sign0(cfg.target_pose - std::abs(pose)) * sign0(pose);
  if (d_pose != 0.0) image_cot += d_pose * ev.pose->image_gradient(image);

  return generator.vjp(v, image_cot);
}

Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& v,
                                  double h) {
  if (!(h > 0.0)) fail(ErrorKind::config, "finite_difference_gradient: h must be > 0");
  Vector grad(v.size());
  Vector probe = v;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    probe[i] = v[i] + h;
    const double plus = f(probe);
    probe[i] = v[i] - h;
    const double minus = f(probe);
    probe[i] = v[i];
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("finite_difference_gradient: non-finite value at coordinate " +
                             std::to_string(i),
                         -1);
    }
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

std::uint64_t vector_hash(const Vector& v) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFFu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

AttrOpResult attrop_adjust(const FeatureVector& v_id, const FeatureVector& v_im,
                           const Generator& generator, const Evaluators& evaluators,
                           const AttrOpConfig& cfg) {
  cfg.validate();
  require_evaluators(evaluators);
  require_same_length(static_cast<std::size_t>(v_id.size()), static_cast<std::size_t>(v_im.size()),
                      "attrop_adjust");
  const auto d = static_cast<std::size_t>(v_im.size());
  if (cfg.grad_mode == GradMode::finite_difference &&
      2 * d * cfg.iterations > cfg.fd_budget) {
    fail(ErrorKind::budget, "attrop: finite-difference gradients need " +
                                std::to_string(2 * d * cfg.iterations) +
                                " generator evaluations, budget is " +
                                std::to_string(cfg.fd_budget));
  }

  auto eval_at = [&](const Vector& v) {
    return evaluate(generator.generate(v), v_id, evaluators, cfg);
  };
  auto record = [](std::size_t it, const Evaluated& e, const Vector& v, double step, double gn) {
    TraceRecord r;
    r.iteration = it;
    r.loss = e.loss;
    r.pose = e.pose;
    r.quality = e.quality;
    r.identity_cosine = e.identity_cosine;
    r.step = step;
    r.grad_norm = gn;
    r.vector_hash = vector_hash(v);
    return r;
  };

  AttrOpResult result;
  result.adjusted = v_im;
  Evaluated current = eval_at(result.adjusted);
  if (!std::isfinite(current.loss.total)) throw NumericError("attrop: non-finite initial loss", 0);
  result.trace.push_back(record(0, current, result.adjusted, 0.0, 0.0));

  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const long it = static_cast<long>(t) + 1;
    Vector grad;
    if (cfg.grad_mode == GradMode::analytic) {
      grad = attrop_gradient(result.adjusted, v_id, generator, evaluators, cfg);
    } else {
      try {
        grad = finite_difference_gradient(
            [&](const Vector& w) { return eval_at(w).loss.total; }, result.adjusted, cfg.fd_step);
      } catch (const NumericError& e) {
        throw NumericError(std::string("attrop: ") + e.what(), it);
      }
    }
    if (!all_finite(grad)) {
      throw NumericError("attrop: non-finite gradient at iteration " + std::to_string(it), it);
    }
    const double grad_norm = grad.norm();
    if (grad_norm > cfg.grad_clip) grad *= cfg.grad_clip / grad_norm;

    double step = cfg.step_size;
    Vector next;
    Evaluated trial;
    auto try_step = [&] {
      next = result.adjusted - step * grad;
      trial = eval_at(next);
      if (!std::isfinite(trial.loss.total)) {
        throw NumericError("attrop: non-finite loss at iteration " + std::to_string(it), it);
      }
    };
    try_step();
    if (cfg.backtrack) {
      for (std::size_t h = 0; h < cfg.max_halvings && trial.loss.total > current.loss.total; ++h) {
        step *= 0.5;
        try_step();
      }
      if (trial.loss.total > current.loss.total) {
        // No acceptable step; stay put for this iteration.
        step = 0.0;
        next = result.adjusted;
        trial = current;
      }
    }
    result.adjusted = std::move(next);
    current = trial;
    result.trace.push_back(record(t + 1, current, result.adjusted, step, grad_norm));
  }
  return result;
}

nlohmann::json trace_record_json(const TraceRecord& r) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.vector_hash));
  return {{"iteration", r.iteration},
          {"loss_total", r.loss.total},
          {"loss_id", r.loss.id},
          {"loss_quality", r.loss.quality},
          {"loss_pose", r.loss.pose},
          {"pose", r.pose},
          {"quality", r.quality},
          {"identity_cosine", r.identity_cosine},
          {"step", r.step},
          {"grad_norm", r.grad_norm},
          {"vector_hash", hash}};
}

std::string trace_jsonl(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += trace_record_json(r).dump() + "\n";
  return out;
}

}  // namespace idforge
