#include "provfield/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace provfield {

ThresholdSchedule ThresholdSchedule::log_linear(int count, double lo, double hi) {
  if (count < 2) throw std::invalid_argument("ThresholdSchedule: count >= 2");
  if (!(lo > 0.0 && lo < hi)) {
    throw std::invalid_argument("ThresholdSchedule: need 0 < lo < hi");
  }
  ThresholdSchedule s;
  s.deltas.resize(count);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int k = 0; k < count; ++k) {
    s.deltas[k] = std::exp(llo + (lhi - llo) * k / (count - 1));
  }
  s.deltas.front() = lo;
  s.deltas.back() = hi;
  return s;
}

std::pair<double, double> precision_recall_at(const PrPoint& point, double delta) {
  if (point.gt.empty()) {
    throw std::invalid_argument("precision_recall_at: empty ground truth");
  }
  if (point.pred.empty()) return {0.0, 0.0};
  int covered = 0;
  for (const auto& g : point.gt) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : point.pred) best = std::min(best, (g - p).squaredNorm());
    if (best < delta) ++covered;
  }
  int close = 0;
  for (const auto& p : point.pred) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : point.gt) best = std::min(best, (p - g).squaredNorm());
    if (best < delta) ++close;
  }
  return {static_cast<double>(covered) / point.gt.size(),
          static_cast<double>(close) / point.pred.size()};
}

PrCurve ap_auc(std::span<const PrPoint> points, const ThresholdSchedule& schedule) {
  if (points.empty()) throw std::invalid_argument("ap_auc: no points");
  const int n = static_cast<int>(schedule.deltas.size());
  PrCurve curve;
  curve.precision.assign(n, 0.0);
  curve.recall.assign(n, 0.0);

  // Per point, the delta sweep only needs the sorted min-distances.
  for (const auto& point : points) {
    if (point.gt.empty()) {
      throw std::invalid_argument("ap_auc: point with empty ground truth");
    }
    std::vector<double> gt_min, pred_min;
    for (const auto& g : point.gt) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& p : point.pred) best = std::min(best, (g - p).squaredNorm());
      gt_min.push_back(best);
    }
    for (const auto& p : point.pred) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& g : point.gt) best = std::min(best, (p - g).squaredNorm());
      pred_min.push_back(best);
    }
    std::sort(gt_min.begin(), gt_min.end());
    std::sort(pred_min.begin(), pred_min.end());
    for (int k = 0; k < n; ++k) {
      const double d = schedule.deltas[k];
      const auto covered =
          std::lower_bound(gt_min.begin(), gt_min.end(), d) - gt_min.begin();
      curve.precision[k] += static_cast<double>(covered) / gt_min.size();
      if (!pred_min.empty()) {
        const auto close =
            std::lower_bound(pred_min.begin(), pred_min.end(), d) - pred_min.begin();
        curve.recall[k] += static_cast<double>(close) / pred_min.size();
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(points.size());
  for (int k = 0; k < n; ++k) {
    curve.precision[k] *= inv;
    curve.recall[k] *= inv;
  }

  // AP = sum [R(k) - R(k_prev)] P(k) over ascending thresholds with R(-1)=0;
  // AUC adds the (R=0, P=1) boundary and integrates P dR by trapezoid.
  double ap = 0.0, auc = 0.0;
  double r_prev = 0.0, p_prev = 1.0;
  for (int k = 0; k < n; ++k) {
    const double dr = curve.recall[k] - r_prev;
    ap += dr * curve.precision[k];
    auc += dr * 0.5 * (curve.precision[k] + p_prev);
    r_prev = curve.recall[k];
    p_prev = curve.precision[k];
  }
  curve.ap = ap;
  curve.auc = auc;
  return curve;
}

SparsificationResult sparsification_curve(std::span<const double> errors,
                                          std::span<const double> scores) {
  if (errors.size() != scores.size()) {
    throw std::invalid_argument("sparsification_curve: length mismatch");
  }
  const size_t n = errors.size();
  if (n == 0) return {};

  const auto order_desc = [n](std::span<const double> key) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return key[a] > key[b]; });
    return idx;
  };

  // Removing the k largest by key leaves the suffix of the descending order.
  const auto curve_for = [&](const std::vector<size_t>& order) {
    std::vector<double> suffix(n + 1, 0.0);
    for (size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + errors[order[i]];
    std::vector<double> curve(n);
    for (size_t k = 0; k < n; ++k) {
      curve[k] = suffix[k] / static_cast<double>(n - k);
    }
    return curve;
  };

  SparsificationResult res;
  res.oracle_curve = curve_for(order_desc(errors));
  res.score_curve = curve_for(order_desc(scores));
  double gap = 0.0;
  for (size_t k = 0; k < n; ++k) gap += res.score_curve[k] - res.oracle_curve[k];
  res.ause = gap / static_cast<double>(n);
  return res;
}

std::vector<PrPoint> build_pr_points(const DensityScene& scene,
                                     std::span<const PinholeCamera> cams,
                                     const ProvenanceField& field,
                                     const EvalProtocolConfig& cfg) {
  std::vector<PrPoint> points;
  const auto& b = scene.bounds();
  const Vector3d ext = b.extent();
  const int r = cfg.lattice_res;
  const double t_scale = field.cfg.t_scale();
  long idx = 0;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      for (int k = 0; k < r; ++k, ++idx) {
        const Vector3d x = b.min + Vector3d(ext.x() * (i + 0.5) / r,
                                            ext.y() * (j + 0.5) / r,
                                            ext.z() * (k + 0.5) / r);
        PrPoint point;
        const auto emp = empirical_provenance(scene, cams, x);
        for (const auto& tup : emp.tuples) {
          if (tup.visibility() >= cfg.gt_visibility_min) {
            point.gt.push_back(tup.tuple(t_scale));
          }
        }
        if (point.gt.empty()) continue;  // excluded upstream by protocol
        const auto kept =
            sample_provenances(field, x, cfg.pred_draws,
                               cfg.seed ^ (0x2545f4914f6cdd1dull * (idx + 1)),
                               cfg.pred_visibility_min);
        for (const auto& s : kept) point.pred.push_back(s.tuple(t_scale));
        points.push_back(std::move(point));
      }
    }
  }
  return points;
}

}  // namespace provfield
