#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tslab/common.hpp"

namespace tslab {

enum class TaskKind { regression, classification };

inline real mae(std::span<const real> pred, std::span<const real> truth) {
  if (pred.size() != truth.size()) throw param_error("mae: length mismatch");
  if (pred.empty()) throw param_error("mae: empty input");
  real acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::fabs(pred[i] - truth[i]);
  return acc / static_cast<real>(pred.size());
}

// One-vs-all F1 per class, averaged with weights equal to each class's share
// of the true labels. A class with no true instances and no predictions
// contributes F1 = 0 at weight 0.
inline real weighted_f1(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                        std::size_t num_classes) {
  if (pred.size() != truth.size()) throw param_error("weighted_f1: length mismatch");
  if (pred.empty()) throw param_error("weighted_f1: empty input");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_classes || truth[i] >= num_classes) {
      throw param_error("weighted_f1: label out of range at index " + std::to_string(i));
    }
    if (pred[i] == truth[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  real score = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t support = tp[c] + fn[c];
    if (support == 0) continue;  // weight 0
    const real precision = (tp[c] + fp[c]) > 0 ? static_cast<real>(tp[c]) / static_cast<real>(tp[c] + fp[c]) : 0.0;
    const real recall = static_cast<real>(tp[c]) / static_cast<real>(support);
    const real f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    score += f1 * static_cast<real>(support) / static_cast<real>(pred.size());
  }
  return score;
}

// ---------------------------------------------------------------------------
// Convergence rate: the per-epoch validation-metric curve's AUC as a fraction
// of its bounding rectangle, under a rectangle rule with unit epoch width.
// Classification curves improve upward (F1), regression curves improve
// downward (MAE), so the regression variant is vertically inverted. A
// constant curve has a zero-area rectangle; it scores 1.0 and is flagged so
// reports can exclude it from convergence comparisons.
// ---------------------------------------------------------------------------

struct ConvergenceInput {
  std::vector<real> curve;
  TaskKind task_kind = TaskKind::regression;
};

struct ConvergenceRate {
  real value = 0.0;
  bool degenerate = false;
};

inline ConvergenceRate convergence_rate(const ConvergenceInput& input) {
  if (input.curve.empty()) throw param_error("convergence_rate: empty curve");
  check_finite(input.curve, "convergence_rate");
  real lo = input.curve[0], hi = input.curve[0];
  for (real v : input.curve) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) return {1.0, true};
  real auc = 0.0;
  for (real v : input.curve) {
    auc += (input.task_kind == TaskKind::classification) ? (v - lo) : (hi - v);
  }
  return {auc / (static_cast<real>(input.curve.size()) * (hi - lo)), false};
}

}  // namespace tslab
