#include "provfield/applications.hpp"

#include <algorithm>
#include <cmath>

namespace provfield {

namespace {

struct HingePair {
  Ray prov_ray;
  double t_arc;     // arc length from y to the query point
  double t_train;   // training-ray parameter of the query point
};

}  // namespace

double prov_nvs_loss(const VoxelField& voxel, const ProvenanceField& field,
                     const Ray& train_ray, const RegularizerConfig& cfg,
                     Rng& rng, Eigen::VectorXd* grad) {
  const double span = (train_ray.far - train_ray.near) / cfg.points_per_ray;
  // First pass: collect kept (point, sample) pairs with their transmittances.
  std::vector<HingePair> pairs;
  std::vector<double> t_train_of_pair;
  for (int k = 0; k < cfg.points_per_ray; ++k) {
    const double tk = train_ray.near + (k + rng.uniform()) * span;
    const Vector3d x = train_ray.at(tk);
    if (!voxel.bounds().contains(x)) continue;
    const double t_vis = voxel.transmittance(train_ray, tk);
    if (t_vis <= cfg.tau_vis) continue;
    const auto kept = sample_provenances(field, x, cfg.samples_per_point,
                                         rng.next_u64(), cfg.v_min);
    for (const auto& s : kept) {
      const Vector3d y = recover_observation_location(x, s);
      const double v = s.visibility();
      Ray pr;
      pr.origin = y;
      pr.dir = s.d / v;
      pr.near = 0.0;
      pr.far = s.t / v;
      pairs.push_back({pr, s.t / v, tk});
      t_train_of_pair.push_back(t_vis);
    }
  }
  if (pairs.empty()) return 0.0;

  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  double loss = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const double t_prov = voxel.transmittance(pairs[i].prov_ray, pairs[i].t_arc);
    const double term = hinge_term(cfg.alpha, t_prov, t_train_of_pair[i]);
    if (term <= 0.0) continue;
    loss += term * inv_n;
    if (grad != nullptr) {
      voxel.transmittance_grad(pairs[i].prov_ray, pairs[i].t_arc, inv_n, *grad);
      voxel.transmittance_grad(train_ray, pairs[i].t_train, -inv_n, *grad);
    }
  }
  return loss;
}

RefineResult refine_density(const VoxelField& init, const ProvenanceField& field,
                            std::span<const PinholeCamera> cams, int holdout_index,
                            const DensityScene& gt_scene,
                            const RegularizerConfig& cfg, uint64_t seed) {
  if (holdout_index < 0 || holdout_index >= static_cast<int>(cams.size())) {
    throw std::invalid_argument("refine_density: bad holdout index");
  }
  std::vector<PinholeCamera> train_cams;
  for (size_t i = 0; i < cams.size(); ++i) {
    if (static_cast<int>(i) != holdout_index) train_cams.push_back(cams[i]);
  }
  if (train_cams.empty()) {
    throw std::invalid_argument("refine_density: no training cameras left");
  }
  const PinholeCamera& holdout = cams[holdout_index];

  RefineResult res{init, {}};
  Adam opt({res.voxel.raw().size()}, {.lr = cfg.learning_rate});
  Rng rng_pixels(seed);
  Rng rng_reg(seed ^ 0x5bf03635f0a5a1e3ull);

  const auto holdout_mae = [&]() {
    double sum = 0.0;
    long n = 0;
    for (int v = cfg.holdout_stride / 2; v < holdout.height; v += cfg.holdout_stride) {
      for (int u = cfg.holdout_stride / 2; u < holdout.width; u += cfg.holdout_stride) {
        const Ray ray = pixel_ray(holdout, Vector2d(u + 0.5, v + 0.5));
        const double pred = render_depth(res.voxel, ray, cfg.depth_samples);
        const double gt = render_depth(gt_scene, ray, cfg.depth_samples);
        sum += std::abs(pred - gt);
        ++n;
      }
    }
    return sum / std::max(1L, n);
  };

  Eigen::VectorXd grad(res.voxel.raw().size());
  double depth_loss = 0.0, reg_loss = 0.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    grad.setZero();
    const auto& cam =
        train_cams[rng_pixels.uniform_int(static_cast<int>(train_cams.size()))];
    depth_loss = 0.0;
    reg_loss = 0.0;
    std::vector<Ray> rays;
    rays.reserve(cfg.rays_per_iter);
    for (int r = 0; r < cfg.rays_per_iter; ++r) {
      rays.push_back(pixel_ray(cam, Vector2d(rng_pixels.uniform(0.0, cam.width),
                                             rng_pixels.uniform(0.0, cam.height))));
    }
    const double inv_r = 1.0 / static_cast<double>(cfg.rays_per_iter);
    for (const Ray& ray : rays) {
      const double gt = render_depth(gt_scene, ray, cfg.depth_samples);
      const double pred = res.voxel.render_depth_grad(ray, cfg.depth_samples, 0.0,
                                                      nullptr);
      const double err = pred - gt;
      depth_loss += err * err * inv_r;
      res.voxel.render_depth_grad(ray, cfg.depth_samples,
                                  cfg.depth_weight * 2.0 * err * inv_r, &grad);
    }
    if (cfg.reg_weight > 0.0) {
      Eigen::VectorXd reg_grad = Eigen::VectorXd::Zero(grad.size());
      for (const Ray& ray : rays) {
        reg_loss +=
            inv_r * prov_nvs_loss(res.voxel, field, ray, cfg, rng_reg, &reg_grad);
      }
      grad += cfg.reg_weight * inv_r * reg_grad;
    }
    const double total = cfg.depth_weight * depth_loss + cfg.reg_weight * reg_loss;
    if (!std::isfinite(total)) throw TrainingDiverged(it);

    Eigen::VectorXd* params[1] = {&res.voxel.raw()};
    const Eigen::VectorXd* grads[1] = {&grad};
    std::string_view names[1] = {"voxel"};
    opt.step(params, grads, names);

    if (it % cfg.eval_every == 0 || it == cfg.iterations - 1) {
      res.rows.push_back({it, holdout_mae(), reg_loss, depth_loss});
    }
  }
  if (cfg.iterations == 0) res.rows.push_back({0, holdout_mae(), 0.0, 0.0});
  return res;
}

// ---------------------------------------------------------------------------

std::pair<double, double> selection_loss_from_samples(
    const PinholeCamera& cam,
    std::span<const std::vector<ProvenanceSample>> per_point_samples,
    std::span<const Vector3d> target_points) {
  if (per_point_samples.size() != target_points.size()) {
    throw std::invalid_argument("selection_loss: sample/point count mismatch");
  }
  const Vector3d axis = cam.principal_axis();
  double l_c = 0.0, l_d = 0.0;
  bool any = false;
  for (size_t i = 0; i < target_points.size(); ++i) {
    const auto& samples = per_point_samples[i];
    if (samples.empty()) continue;
    any = true;
    double max_c = -std::numeric_limits<double>::infinity();
    double max_d = -std::numeric_limits<double>::infinity();
    for (const auto& s : samples) {
      const Vector3d y = recover_observation_location(target_points[i], s);
      max_c = std::max(max_c, (y - cam.c).squaredNorm());
      max_d = std::max(max_d, axis.dot(s.d));
    }
    l_c += max_c;
    l_d += max_d;
  }
  if (!any) {
    throw std::runtime_error("selection_loss: no target point had kept samples");
  }
  return {l_c, l_d};
}

std::pair<double, double> selection_loss(const PinholeCamera& cam,
                                         std::span<const Vector3d> target_points,
                                         const ProvenanceField& field, int k,
                                         uint64_t seed) {
  std::vector<std::vector<ProvenanceSample>> samples;
  samples.reserve(target_points.size());
  for (size_t i = 0; i < target_points.size(); ++i) {
    samples.push_back(sample_provenances(field, target_points[i], k,
                                         seed ^ (0x9e3779b97f4a7c15ull * (i + 1)),
                                         field.cfg.v_min));
  }
  return selection_loss_from_samples(cam, samples, target_points);
}

double area_objective(const PinholeCamera& cam,
                      const std::array<Vector3d, 4>& quad) {
  std::array<Vector2d, 4> px;
  for (int i = 0; i < 4; ++i) {
    const auto p = project_point(cam, quad[i]);
    if (!p) return -kOutOfFrustumPenaltyPx2;
    px[i] = *p;
  }
  double twice_area = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = px[i];
    const auto& b = px[(i + 1) % 4];
    twice_area += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * std::abs(twice_area);
}

double normal_objective(const PinholeCamera& cam, const Vector3d& normal) {
  if (std::abs(normal.norm() - 1.0) > 1e-6) {
    throw std::invalid_argument("normal_objective: normal must be unit length");
  }
  return cam.principal_axis().dot(normal);
}

// ---------------------------------------------------------------------------

namespace {

struct FrozenSamples {
  std::vector<std::vector<ProvenanceSample>> per_point;
  bool any = false;
};

FrozenSamples draw_samples(const ProvenanceField& field,
                           std::span<const Vector3d> targets,
                           const ViewSelectConfig& cfg, uint64_t seed) {
  FrozenSamples out;
  out.per_point.reserve(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    out.per_point.push_back(
        sample_provenances(field, targets[i], cfg.samples_per_point,
                           seed ^ (0xd6e8feb86659fd93ull * (i + 1)), cfg.v_min));
    if (!out.per_point.back().empty()) out.any = true;
  }
  return out;
}

double objective_value(const PinholeCamera& cam, const ViewSelectConfig& cfg) {
  if (cfg.objective == ViewSelectConfig::Objective::kArea) {
    std::array<Vector3d, 4> quad;
    for (int i = 0; i < 4; ++i) quad[i] = cfg.target_points.at(i);
    return -area_objective(cam, quad);
  }
  return normal_objective(cam, cfg.target_normal);
}

// Total loss under frozen samples. The center term is minimized and the
// direction term maximized, so the selection part enters as w_c L_c - w_d L_d.
double total_loss(const PinholeCamera& cam, const ViewSelectConfig& cfg,
                  const FrozenSamples& frozen) {
  double loss = objective_value(cam, cfg);
  if (cfg.use_selection && frozen.any) {
    const auto [l_c, l_d] =
        selection_loss_from_samples(cam, frozen.per_point, cfg.target_points);
    loss += cfg.weight_center * l_c - cfg.weight_direction * l_d;
  }
  return loss;
}

int targets_in_frustum(const PinholeCamera& cam, std::span<const Vector3d> pts) {
  int n = 0;
  for (const auto& p : pts) {
    if (project_point(cam, p).has_value()) ++n;
  }
  return n;
}

double nearest_y_distance(const PinholeCamera& cam, const FrozenSamples& frozen,
                          std::span<const Vector3d> targets) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < frozen.per_point.size(); ++i) {
    for (const auto& s : frozen.per_point[i]) {
      const Vector3d y = recover_observation_location(targets[i], s);
      best = std::min(best, (y - cam.c).norm());
    }
  }
  return best;
}

}  // namespace

ViewSelectResult optimize_viewpoint(const PinholeCamera& init_cam,
                                    const ProvenanceField& field,
                                    const ViewSelectConfig& cfg, uint64_t seed) {
  if (cfg.target_points.empty()) {
    throw std::invalid_argument("optimize_viewpoint: no target points");
  }
  if (cfg.objective == ViewSelectConfig::Objective::kArea &&
      cfg.target_points.size() < 4) {
    throw std::invalid_argument("optimize_viewpoint: area objective needs 4 points");
  }
  if (targets_in_frustum(init_cam, cfg.target_points) == 0) {
    throw std::invalid_argument("optimize_viewpoint: init camera sees no target");
  }

  ViewSelectResult res;
  res.trajectory.push_back(init_cam);
  PinholeCamera cam = init_cam;

  for (int it = 0; it < cfg.iterations; ++it) {
    const FrozenSamples frozen =
        draw_samples(field, cfg.target_points, cfg, seed + 1315423911u * it);
    const auto log_row = [&](int iter, const PinholeCamera& c) {
      double l_c = 0.0, l_d = 0.0;
      if (frozen.any) {
        std::tie(l_c, l_d) =
            selection_loss_from_samples(c, frozen.per_point, cfg.target_points);
      }
      res.rows.push_back({iter, objective_value(c, cfg), l_c, l_d,
                          nearest_y_distance(c, frozen, cfg.target_points)});
    };
    if (it == 0) log_row(0, cam);

    // Central differences over the 6 pose increments.
    const double f0 = total_loss(cam, cfg, frozen);
    Eigen::Matrix<double, 6, 1> g;
    for (int a = 0; a < 6; ++a) {
      Vector3d omega = Vector3d::Zero(), dc = Vector3d::Zero();
      if (a < 3) {
        omega[a] = cfg.fd_step;
      } else {
        dc[a - 3] = cfg.fd_step;
      }
      const double fp = total_loss(pose_retract(cam, omega, dc), cfg, frozen);
      const double fm = total_loss(pose_retract(cam, -omega, -dc), cfg, frozen);
      g[a] = (fp - fm) / (2.0 * cfg.fd_step);
    }

    // Normalized descent directions keep steps in radians/meters whatever
    // the objective's scale.
    Vector3d dir_rot = Vector3d::Zero(), dir_trans = Vector3d::Zero();
    if (g.head<3>().norm() > 1e-12) dir_rot = -g.head<3>().normalized();
    if (g.tail<3>().norm() > 1e-12) dir_trans = -g.tail<3>().normalized();

    double scale = 1.0;
    PinholeCamera next = cam;
    bool accepted = !cfg.line_search;
    for (int attempt = 0; attempt < (cfg.line_search ? 8 : 1); ++attempt) {
      next = pose_retract(cam, scale * cfg.step_rot * dir_rot,
                          scale * cfg.step_trans * dir_trans);
      if (!cfg.line_search || total_loss(next, cfg, frozen) < f0) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (accepted) cam = next;  // otherwise hold the pose for this iteration
    res.trajectory.push_back(cam);
    log_row(it + 1, cam);

    if (targets_in_frustum(cam, cfg.target_points) == 0) {
      res.status = ViewSelectStatus::kTargetsLost;
      break;
    }
  }
  if (cfg.iterations == 0) {
    const FrozenSamples frozen = draw_samples(field, cfg.target_points, cfg, seed);
    double l_c = 0.0, l_d = 0.0;
    if (frozen.any) {
      std::tie(l_c, l_d) =
          selection_loss_from_samples(cam, frozen.per_point, cfg.target_points);
    }
    res.rows.push_back({0, objective_value(cam, cfg), l_c, l_d,
                        nearest_y_distance(cam, frozen, cfg.target_points)});
  }
  const FrozenSamples final_eval =
      draw_samples(field, cfg.target_points, cfg, seed ^ 0x7f4a7c15d6e8feb8ull);
  res.final_nearest_y = nearest_y_distance(cam, final_eval, cfg.target_points);
  return res;
}

}  // namespace provfield
