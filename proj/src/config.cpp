#include "provfield/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"

namespace provfield {

namespace {

using nlohmann::ordered_json;

void expect_keys(const ordered_json& j, const std::set<std::string>& known,
                 const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void get_to(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " +
                        e.what());
    }
  }
}

void get_vec3(const ordered_json& j, const char* key, Vector3d& out) {
  if (!j.contains(key)) return;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError(std::string("config: '") + key + "' needs 3 numbers");
  out = Vector3d(v[0], v[1], v[2]);
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path fp(p);
  if (fp.is_absolute()) return fp.lexically_normal().string();
  return std::filesystem::weakly_canonical(base / fp).string();
}

void parse_train(const ordered_json& j, TrainConfig& t) {
  expect_keys(j,
              {"iterations", "rays_per_iter", "points_per_ray", "learning_rate",
               "latent_dim", "latent_scale", "pe_levels", "hidden", "pool_size",
               "resample_every", "near", "far", "vis_gate", "v_min",
               "latent_mode", "point_sampling", "deterministic"},
              "train");
  get_to(j, "iterations", t.iterations);
  get_to(j, "rays_per_iter", t.rays_per_iter);
  get_to(j, "points_per_ray", t.points_per_ray);
  get_to(j, "learning_rate", t.adam.lr);
  get_to(j, "latent_dim", t.field.latent_dim);
  get_to(j, "latent_scale", t.field.latent_scale);
  get_to(j, "pe_levels", t.field.pe_levels);
  get_to(j, "hidden", t.field.hidden);
  get_to(j, "pool_size", t.field.pool_size);
  get_to(j, "resample_every", t.field.resample_every);
  get_to(j, "near", t.field.near);
  get_to(j, "far", t.field.far);
  get_to(j, "vis_gate", t.field.vis_gate);
  get_to(j, "v_min", t.field.v_min);
  get_to(j, "deterministic", t.field.deterministic);
  if (j.contains("latent_mode")) {
    const std::string m = j.at("latent_mode");
    if (m == "spatial") {
      t.field.latent_mode = LatentFunction::Mode::kSpatial;
    } else if (m == "invariant") {
      t.field.latent_mode = LatentFunction::Mode::kInvariant;
    } else {
      throw ConfigError("config: latent_mode must be 'spatial' or 'invariant'");
    }
  }
  if (j.contains("point_sampling")) {
    const std::string m = j.at("point_sampling");
    if (m == "along_rays") {
      t.sampling = TrainConfig::Sampling::kAlongRays;
    } else if (m == "uniform_bounds") {
      t.sampling = TrainConfig::Sampling::kUniformBounds;
    } else {
      throw ConfigError(
          "config: point_sampling must be 'along_rays' or 'uniform_bounds'");
    }
  }
}

void parse_uncertainty(const ordered_json& j, UncertaintyConfig& u) {
  expect_keys(j,
              {"sigma_px", "n_importance", "n_map", "samples_per_point", "v_min",
               "image_size", "focal", "map_stride", "depth_samples",
               "points_per_view"},
              "uncertainty");
  get_to(j, "sigma_px", u.sigma_px);
  get_to(j, "n_importance", u.n_importance);
  get_to(j, "n_map", u.n_map);
  get_to(j, "samples_per_point", u.samples_per_point);
  get_to(j, "v_min", u.v_min);
  int image_size = u.intrinsics.width;
  get_to(j, "image_size", image_size);
  u.intrinsics.width = u.intrinsics.height = image_size;
  get_to(j, "focal", u.intrinsics.focal);
  get_to(j, "map_stride", u.map_stride);
  get_to(j, "depth_samples", u.depth_samples);
  get_to(j, "points_per_view", u.points_per_view);
}

void parse_eval(const ordered_json& j, RunConfig& c) {
  expect_keys(j,
              {"lattice_res", "pred_draws", "gt_visibility_min",
               "pred_visibility_min", "schedule_count", "per_point"},
              "eval");
  get_to(j, "lattice_res", c.eval.lattice_res);
  get_to(j, "pred_draws", c.eval.pred_draws);
  get_to(j, "gt_visibility_min", c.eval.gt_visibility_min);
  get_to(j, "pred_visibility_min", c.eval.pred_visibility_min);
  get_to(j, "per_point", c.eval_per_point);
  if (j.contains("schedule_count")) {
    int count = 500;
    get_to(j, "schedule_count", count);
    if (count < 2) throw ConfigError("config: schedule_count must be >= 2");
    c.eval_schedule_count = count;
  }
}

void parse_refine(const ordered_json& j, RunConfig& c) {
  expect_keys(j,
              {"alpha", "tau_vis", "v_min", "samples_per_point", "points_per_ray",
               "depth_weight", "reg_weight", "iterations", "learning_rate",
               "rays_per_iter", "depth_samples", "eval_every", "holdout_stride",
               "voxel_res", "n_quadrature", "holdout_index", "floater_center",
               "floater_radius", "floater_sigma"},
              "refine");
  auto& r = c.refine;
  get_to(j, "alpha", r.alpha);
  get_to(j, "tau_vis", r.tau_vis);
  get_to(j, "v_min", r.v_min);
  get_to(j, "samples_per_point", r.samples_per_point);
  get_to(j, "points_per_ray", r.points_per_ray);
  get_to(j, "depth_weight", r.depth_weight);
  get_to(j, "reg_weight", r.reg_weight);
  get_to(j, "iterations", r.iterations);
  get_to(j, "learning_rate", r.learning_rate);
  get_to(j, "rays_per_iter", r.rays_per_iter);
  get_to(j, "depth_samples", r.depth_samples);
  get_to(j, "eval_every", r.eval_every);
  get_to(j, "holdout_stride", r.holdout_stride);
  get_to(j, "voxel_res", c.refine_voxel_res);
  get_to(j, "n_quadrature", c.refine_n_quadrature);
  get_to(j, "holdout_index", c.refine_holdout_index);
  get_vec3(j, "floater_center", c.floater_center);
  get_to(j, "floater_radius", c.floater_radius);
  get_to(j, "floater_sigma", c.floater_sigma);
}

void parse_viewselect(const ordered_json& j, RunConfig& c) {
  expect_keys(j,
              {"objective", "iterations", "step_rot", "step_trans",
               "samples_per_point", "v_min", "weight_center", "weight_direction",
               "line_search", "use_selection", "fd_step", "quad", "normal",
               "init_camera"},
              "viewselect");
  auto& v = c.viewselect;
  if (j.contains("objective")) {
    const std::string m = j.at("objective");
    if (m == "area") {
      v.objective = ViewSelectConfig::Objective::kArea;
    } else if (m == "normal") {
      v.objective = ViewSelectConfig::Objective::kNormal;
    } else {
      throw ConfigError("config: objective must be 'area' or 'normal'");
    }
  }
  get_to(j, "iterations", v.iterations);
  get_to(j, "step_rot", v.step_rot);
  get_to(j, "step_trans", v.step_trans);
  get_to(j, "samples_per_point", v.samples_per_point);
  get_to(j, "v_min", v.v_min);
  get_to(j, "weight_center", v.weight_center);
  get_to(j, "weight_direction", v.weight_direction);
  get_to(j, "line_search", v.line_search);
  get_to(j, "use_selection", v.use_selection);
  get_to(j, "fd_step", v.fd_step);
  get_vec3(j, "normal", v.target_normal);
  if (j.contains("quad")) {
    v.target_points.clear();
    for (const auto& q : j.at("quad")) {
      const auto p = q.get<std::vector<double>>();
      if (p.size() != 3) throw ConfigError("config: quad entries need 3 numbers");
      v.target_points.emplace_back(p[0], p[1], p[2]);
    }
  }
  get_to(j, "init_camera", c.viewselect_init_camera);
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  expect_keys(j,
              {"scene", "cameras", "test_cameras", "checkpoint", "out", "seed",
               "fixture", "train", "uncertainty", "eval", "refine", "viewselect"},
              "top level");
  RunConfig c;
  get_to(j, "scene", c.scene_path);
  get_to(j, "cameras", c.cameras_path);
  get_to(j, "test_cameras", c.test_cameras_path);
  get_to(j, "checkpoint", c.checkpoint_prefix);
  get_to(j, "out", c.out_dir);
  get_to(j, "seed", c.seed);
  get_to(j, "fixture", c.fixture);
  if (j.contains("train")) parse_train(j.at("train"), c.train);
  if (j.contains("uncertainty")) parse_uncertainty(j.at("uncertainty"), c.uncertainty);
  if (j.contains("eval")) parse_eval(j.at("eval"), c);
  if (j.contains("refine")) parse_refine(j.at("refine"), c);
  if (j.contains("viewselect")) parse_viewselect(j.at("viewselect"), c);

  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  c.scene_path = resolve(base, c.scene_path);
  c.cameras_path = resolve(base, c.cameras_path);
  c.test_cameras_path = resolve(base, c.test_cameras_path);
  c.checkpoint_prefix = resolve(base, c.checkpoint_prefix);
  c.out_dir = resolve(base, c.out_dir);
  return c;
}

std::string dump_run_config(const RunConfig& c) {
  ordered_json j;
  j["scene"] = c.scene_path;
  j["cameras"] = c.cameras_path;
  j["test_cameras"] = c.test_cameras_path;
  j["checkpoint"] = c.checkpoint_prefix;
  j["out"] = c.out_dir;
  j["seed"] = c.seed;
  if (!c.fixture.empty()) j["fixture"] = c.fixture;
  j["train"] = {
      {"iterations", c.train.iterations},
      {"rays_per_iter", c.train.rays_per_iter},
      {"points_per_ray", c.train.points_per_ray},
      {"learning_rate", c.train.adam.lr},
      {"latent_dim", c.train.field.latent_dim},
      {"latent_scale", c.train.field.latent_scale},
      {"pe_levels", c.train.field.pe_levels},
      {"hidden", c.train.field.hidden},
      {"pool_size", c.train.field.pool_size},
      {"resample_every", c.train.field.resample_every},
      {"near", c.train.field.near},
      {"far", c.train.field.far},
      {"vis_gate", c.train.field.vis_gate},
      {"v_min", c.train.field.v_min},
      {"latent_mode",
       c.train.field.latent_mode == LatentFunction::Mode::kSpatial ? "spatial"
                                                                   : "invariant"},
      {"point_sampling", c.train.sampling == TrainConfig::Sampling::kAlongRays
                             ? "along_rays"
                             : "uniform_bounds"},
      {"deterministic", c.train.field.deterministic},
  };
  j["uncertainty"] = {
      {"sigma_px", c.uncertainty.sigma_px},
      {"n_importance", c.uncertainty.n_importance},
      {"n_map", c.uncertainty.n_map},
      {"samples_per_point", c.uncertainty.samples_per_point},
      {"v_min", c.uncertainty.v_min},
      {"image_size", c.uncertainty.intrinsics.width},
      {"focal", c.uncertainty.intrinsics.focal},
      {"map_stride", c.uncertainty.map_stride},
      {"depth_samples", c.uncertainty.depth_samples},
      {"points_per_view", c.uncertainty.points_per_view},
  };
  j["eval"] = {
      {"lattice_res", c.eval.lattice_res},
      {"pred_draws", c.eval.pred_draws},
      {"gt_visibility_min", c.eval.gt_visibility_min},
      {"pred_visibility_min", c.eval.pred_visibility_min},
      {"schedule_count", c.eval_schedule_count},
      {"per_point", c.eval_per_point},
  };
  j["refine"] = {
      {"alpha", c.refine.alpha},
      {"tau_vis", c.refine.tau_vis},
      {"v_min", c.refine.v_min},
      {"samples_per_point", c.refine.samples_per_point},
      {"points_per_ray", c.refine.points_per_ray},
      {"depth_weight", c.refine.depth_weight},
      {"reg_weight", c.refine.reg_weight},
      {"iterations", c.refine.iterations},
      {"learning_rate", c.refine.learning_rate},
      {"rays_per_iter", c.refine.rays_per_iter},
      {"depth_samples", c.refine.depth_samples},
      {"eval_every", c.refine.eval_every},
      {"holdout_stride", c.refine.holdout_stride},
      {"voxel_res", c.refine_voxel_res},
      {"n_quadrature", c.refine_n_quadrature},
      {"holdout_index", c.refine_holdout_index},
      {"floater_center",
       {c.floater_center.x(), c.floater_center.y(), c.floater_center.z()}},
      {"floater_radius", c.floater_radius},
      {"floater_sigma", c.floater_sigma},
  };
  j["viewselect"] = {
      {"objective", c.viewselect.objective == ViewSelectConfig::Objective::kArea
                        ? "area"
                        : "normal"},
      {"iterations", c.viewselect.iterations},
      {"step_rot", c.viewselect.step_rot},
      {"step_trans", c.viewselect.step_trans},
      {"samples_per_point", c.viewselect.samples_per_point},
      {"v_min", c.viewselect.v_min},
      {"weight_center", c.viewselect.weight_center},
      {"weight_direction", c.viewselect.weight_direction},
      {"line_search", c.viewselect.line_search},
      {"use_selection", c.viewselect.use_selection},
      {"fd_step", c.viewselect.fd_step},
      {"init_camera", c.viewselect_init_camera},
  };
  nlohmann::ordered_json quad = nlohmann::ordered_json::array();
  for (const auto& q : c.viewselect.target_points) {
    quad.push_back({q.x(), q.y(), q.z()});
  }
  j["viewselect"]["quad"] = quad;
  j["viewselect"]["normal"] = {c.viewselect.target_normal.x(),
                               c.viewselect.target_normal.y(),
                               c.viewselect.target_normal.z()};
  return j.dump(2) + "\n";
}

}  // namespace provfield
