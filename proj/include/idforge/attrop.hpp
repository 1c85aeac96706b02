#pragma once

// Attribute optimization: gradient descent on a perturbed vector so the
// rendered image reaches a target pose and quality while staying close to the
// identity vector.
//
//   L      = L_id + L_quality + L_pose
//   L_id      = 1 - cos(FR(img), v_id)
//   L_quality = Q - quality(img)          (hinge: max(0, Q - quality(img)))
//   L_pose    = | P - |pose(img)| |
//
// with img = generator(v) regenerated at every iteration.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "idforge/generator.hpp"

namespace idforge {

enum class GradMode { analytic, finite_difference };

struct AttrOpConfig {
  double target_quality = 27.0;
  double target_pose = 60.0;
  std::size_t iterations = 5;
  double step_size = 0.05;
  GradMode grad_mode = GradMode::analytic;
  double fd_step = 1e-3;
  double grad_clip = 1.0;
  /// Halve the step (at most max_halvings times) when it raises the loss;
  /// a step that still raises the loss is not taken.
  bool backtrack = true;
  std::size_t max_halvings = 4;
  bool hinge_quality = false;
  /// Cap on generator evaluations spent on finite-difference gradients.
  std::size_t fd_budget = std::size_t{1} << 22;

  void validate() const;
};

struct LossTerms {
  double total = 0.0;
  double id = 0.0;
  double quality = 0.0;
  double pose = 0.0;
};

struct TraceRecord {
  std::size_t iteration = 0;
  LossTerms loss;
  double pose = 0.0;
  double quality = 0.0;
  double identity_cosine = 0.0;
  double step = 0.0;       // step length actually applied to reach this state
  double grad_norm = 0.0;  // pre-clip norm of the gradient that produced it
  std::uint64_t vector_hash = 0;
};

struct AttrOpResult {
  FeatureVector adjusted;
  std::vector<TraceRecord> trace;  // iterations + 1 records, initial state first
};

/// Loss of an already-rendered image. Throws config when an evaluator is missing.
LossTerms attrop_loss(const Image& image, const FeatureVector& v_id, const Evaluators& evaluators,
                      const AttrOpConfig& cfg);

/// Analytic gradient of the total loss with respect to v.
Vector attrop_gradient(const FeatureVector& v, const FeatureVector& v_id,
                       const Generator& generator, const Evaluators& evaluators,
                       const AttrOpConfig& cfg);

AttrOpResult attrop_adjust(const FeatureVector& v_id, const FeatureVector& v_im,
                           const Generator& generator, const Evaluators& evaluators,
                           const AttrOpConfig& cfg);

/// Central differences (f(v + h e_i) - f(v - h e_i)) / 2h, 2d evaluations.
Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& v,
                                  double h);

/// FNV-1a over the little-endian bytes of the coordinates.
std::uint64_t vector_hash(const Vector& v);

nlohmann::json trace_record_json(const TraceRecord& record);
std::string trace_jsonl(const std::vector<TraceRecord>& trace);

}  // namespace idforge
