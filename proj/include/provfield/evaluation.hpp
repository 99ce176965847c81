#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

#include "provfield/camera.hpp"
#include "provfield/common.hpp"
#include "provfield/provenance.hpp"
#include "provfield/scene.hpp"

namespace provfield {

// Confidence thresholds, log-linearly interpolated between the endpoints
// (default 500 values from e^-20 to 1); strictly increasing, endpoints exact.
struct ThresholdSchedule {
  std::vector<double> deltas;

  static ThresholdSchedule log_linear(int count = 500,
                                      double lo = std::exp(-20.0),
                                      double hi = 1.0);
};

// Predicted vs ground-truth tuples at one evaluation point, both as 4-dim
// vectors [t/(far-near), d].
struct PrPoint {
  std::vector<Eigen::Vector4d> gt;
  std::vector<Eigen::Vector4d> pred;
};

// Precision = fraction of gt tuples whose squared distance to the nearest
// prediction is < delta; recall = fraction of predictions within delta of
// the nearest gt tuple. A point with no predictions scores (0, 0).
std::pair<double, double> precision_recall_at(const PrPoint& point, double delta);

struct PrCurve {
  std::vector<double> precision;  // aligned with the schedule (ascending)
  std::vector<double> recall;
  double ap = 0.0;
  double auc = 0.0;
};

// Mean PR over points per threshold; AP by the telescoping sum with the
// boundary Recall = 0, Precision = 1, AUC by trapezoid under precision vs
// recall including that boundary.
PrCurve ap_auc(std::span<const PrPoint> points, const ThresholdSchedule& schedule);

struct SparsificationResult {
  std::vector<double> oracle_curve;  // mean error after removing top-k by error
  std::vector<double> score_curve;   // ... by uncertainty score
  double ause = 0.0;                 // mean gap between the curves
};

SparsificationResult sparsification_curve(std::span<const double> errors,
                                          std::span<const double> scores);

// ---------------------------------------------------------------------------
// Protocol plumbing: evaluation points on a dense lattice over the scene
// bound, gt from the analytic oracle (zero tuples dropped, visibility filter),
// predictions from K field draws with their own visibility filter.
// ---------------------------------------------------------------------------
struct EvalProtocolConfig {
  int lattice_res = 8;
  int pred_draws = 128;
  double gt_visibility_min = 0.9;
  double pred_visibility_min = 0.9;
  uint64_t seed = 1;
};

std::vector<PrPoint> build_pr_points(const DensityScene& scene,
                                     std::span<const PinholeCamera> cams,
                                     const ProvenanceField& field,
                                     const EvalProtocolConfig& cfg);

}  // namespace provfield
