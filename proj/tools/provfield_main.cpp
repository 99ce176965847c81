// provfield: stochastic provenance fields over synthetic volumetric scenes.
//
// Subcommands: train, uncertainty, eval, refine, viewselect, gen-scene.
// Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "provfield/applications.hpp"
#include "provfield/config.hpp"
#include "provfield/evaluation.hpp"
#include "provfield/fixtures.hpp"
#include "provfield/image_io.hpp"
#include "provfield/provenance.hpp"
#include "provfield/uncertainty.hpp"

namespace pf = provfield;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
};

pf::RunConfig resolve_config(const CommonArgs& args) {
  pf::RunConfig cfg = pf::load_run_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.out) cfg.out_dir = fs::weakly_canonical(fs::path(*args.out)).string();
  return cfg;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

void echo_config(const pf::RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/resolved_config.json", pf::dump_run_config(cfg));
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

pf::TrainConfig train_config_for(const pf::RunConfig& cfg,
                                 std::span<const pf::PinholeCamera> cams) {
  pf::TrainConfig t = cfg.train;
  if (t.field.near <= 0.0 || t.field.far <= t.field.near) {
    // Derive the t-normalization range from the training cameras.
    double near = cams.front().near, far = cams.front().far;
    for (const auto& cam : cams) {
      near = std::min(near, cam.near);
      far = std::max(far, cam.far);
    }
    t.field.near = near;
    t.field.far = far;
  }
  return t;
}

int cmd_train(const CommonArgs& args) {
  const pf::RunConfig cfg = resolve_config(args);
  const pf::AnalyticScene scene = pf::load_scene(cfg.scene_path);
  const auto cams = pf::load_cameras(cfg.cameras_path);
  if (cams.empty()) throw pf::ConfigError("train: camera file is empty");
  echo_config(cfg);

  const pf::TrainConfig tc = train_config_for(cfg, cams);
  pf::TrainResult result;
  try {
    result = tc.field.deterministic
                 ? pf::train_deterministic_baseline(scene, cams, tc, cfg.seed)
                 : pf::train_provenance_field(scene, cams, tc, cfg.seed);
  } catch (const pf::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  pf::save_field(cfg.out_dir + "/field", result.field);
  std::string csv = "iter,loss\n";
  for (size_t i = 0; i < result.loss_trace.size(); ++i) {
    csv += std::to_string(i) + "," + csv_double(result.loss_trace[i]) + "\n";
  }
  write_text(cfg.out_dir + "/loss.csv", csv);
  std::cout << "trained " << result.loss_trace.size() << " iterations -> "
            << cfg.out_dir << "\n";
  return 0;
}

int cmd_uncertainty(const CommonArgs& args) {
  pf::RunConfig cfg = resolve_config(args);
  if (cfg.checkpoint_prefix.empty()) {
    throw pf::ConfigError("uncertainty: 'checkpoint' is required");
  }
  const pf::ProvenanceField field = pf::load_field(cfg.checkpoint_prefix);
  const pf::AnalyticScene scene = pf::load_scene(cfg.scene_path);
  const auto test_cams = pf::load_cameras(cfg.test_cameras_path.empty()
                                              ? cfg.cameras_path
                                              : cfg.test_cameras_path);
  if (test_cams.empty()) throw pf::ConfigError("uncertainty: no test cameras");
  echo_config(cfg);
  cfg.uncertainty.seed = cfg.seed;

  const pf::SurfaceNll report =
      pf::nll_of_surface(field, scene, test_cams, cfg.uncertainty);
  nlohmann::ordered_json j;
  j["scene"] = cfg.scene_path;
  j["n_points"] = report.n_points;
  j["n_sentinel"] = report.n_sentinel;
  j["mean_nll"] = report.mean_nll;
  j["per_point"] = report.per_point;
  write_text(cfg.out_dir + "/nll_report.json", j.dump(2) + "\n");

  for (size_t i = 0; i < test_cams.size(); ++i) {
    const pf::UncertaintyMaps maps =
        pf::uncertainty_map(field, scene, test_cams[i], cfg.uncertainty);
    const std::string base = cfg.out_dir + "/view" + std::to_string(i);
    pf::write_pfm(base + "_nll.pfm", maps.cols, maps.rows, maps.nll);
    pf::write_pfm(base + "_depth.pfm", maps.cols, maps.rows, maps.depth);
    pf::write_pfm(base + "_deptherr.pfm", maps.cols, maps.rows, maps.depth_error);
    pf::write_ppm_colormapped(base + "_nll.ppm", maps.cols, maps.rows,
                              maps.nll_norm);
    pf::write_ppm_colormapped(base + "_deptherr.ppm", maps.cols, maps.rows,
                              maps.depth_error_norm);
  }
  std::cout << "mean NLL " << report.mean_nll << " over " << report.n_points
            << " surface points (" << report.n_sentinel << " sentinel) -> "
            << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  pf::RunConfig cfg = resolve_config(args);
  if (cfg.checkpoint_prefix.empty()) {
    throw pf::ConfigError("eval: 'checkpoint' is required");
  }
  const pf::ProvenanceField field = pf::load_field(cfg.checkpoint_prefix);
  const pf::AnalyticScene scene = pf::load_scene(cfg.scene_path);
  const auto cams = pf::load_cameras(cfg.cameras_path);
  echo_config(cfg);
  cfg.eval.seed = cfg.seed;

  const auto points = pf::build_pr_points(scene, cams, field, cfg.eval);
  if (points.empty()) throw pf::ConfigError("eval: no lattice point has ground truth");
  const auto schedule = pf::ThresholdSchedule::log_linear(cfg.eval_schedule_count);
  const pf::PrCurve curve = pf::ap_auc(points, schedule);

  nlohmann::ordered_json j;
  j["ap"] = curve.ap;
  j["auc"] = curve.auc;
  j["n_points"] = points.size();
  j["schedule"] = {{"count", cfg.eval_schedule_count},
                   {"lo", schedule.deltas.front()},
                   {"hi", schedule.deltas.back()}};
  j["distance"] = "squared-4dim-t-normalized";
  if (cfg.eval_per_point) {
    nlohmann::ordered_json pp = nlohmann::ordered_json::array();
    for (const auto& p : points) {
      pp.push_back({{"n_gt", p.gt.size()}, {"n_pred", p.pred.size()}});
    }
    j["per_point"] = pp;
  }
  write_text(cfg.out_dir + "/metrics.json", j.dump(2) + "\n");

  std::string csv = "threshold,precision,recall\n";
  for (size_t k = 0; k < schedule.deltas.size(); ++k) {
    csv += csv_double(schedule.deltas[k]) + "," + csv_double(curve.precision[k]) +
           "," + csv_double(curve.recall[k]) + "\n";
  }
  write_text(cfg.out_dir + "/pr_curve.csv", csv);
  std::cout << "AP " << curve.ap << " AUC " << curve.auc << " over "
            << points.size() << " points -> " << cfg.out_dir << "\n";
  return 0;
}

int cmd_refine(const CommonArgs& args) {
  const pf::RunConfig cfg = resolve_config(args);
  if (cfg.checkpoint_prefix.empty()) {
    throw pf::ConfigError("refine: 'checkpoint' is required");
  }
  const pf::ProvenanceField field = pf::load_field(cfg.checkpoint_prefix);
  const pf::AnalyticScene scene = pf::load_scene(cfg.scene_path);
  const auto cams = pf::load_cameras(cfg.cameras_path);
  if (cfg.refine_holdout_index < 0 ||
      cfg.refine_holdout_index >= static_cast<int>(cams.size())) {
    throw pf::ConfigError("refine: holdout_index out of range");
  }
  echo_config(cfg);

  pf::VoxelField voxel = pf::VoxelField::from_scene(scene, cfg.refine_voxel_res,
                                                    cfg.refine_n_quadrature);
  if (cfg.floater_radius > 0.0) {
    voxel.add_density_ball(cfg.floater_center, cfg.floater_radius,
                           cfg.floater_sigma);
  }
  std::optional<pf::RefineResult> maybe;
  try {
    maybe = pf::refine_density(voxel, field, cams, cfg.refine_holdout_index,
                               scene, cfg.refine, cfg.seed);
  } catch (const pf::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  const pf::RefineResult& result = *maybe;
  std::string csv = "iter,depth_mae_holdout,reg_loss,depth_loss\n";
  for (const auto& row : result.rows) {
    csv += std::to_string(row.iter) + "," + csv_double(row.depth_mae_holdout) +
           "," + csv_double(row.reg_loss) + "," + csv_double(row.depth_loss) + "\n";
  }
  write_text(cfg.out_dir + "/refine_log.csv", csv);
  nlohmann::ordered_json j;
  j["final_depth_mae_holdout"] = result.rows.back().depth_mae_holdout;
  j["initial_depth_mae_holdout"] = result.rows.front().depth_mae_holdout;
  j["reg_weight"] = cfg.refine.reg_weight;
  j["iterations"] = cfg.refine.iterations;
  write_text(cfg.out_dir + "/refine_summary.json", j.dump(2) + "\n");
  std::cout << "holdout depth MAE " << result.rows.front().depth_mae_holdout
            << " -> " << result.rows.back().depth_mae_holdout << "\n";
  return 0;
}

int cmd_viewselect(const CommonArgs& args) {
  const pf::RunConfig cfg = resolve_config(args);
  if (cfg.checkpoint_prefix.empty()) {
    throw pf::ConfigError("viewselect: 'checkpoint' is required");
  }
  const pf::ProvenanceField field = pf::load_field(cfg.checkpoint_prefix);
  const auto init_cams = pf::load_cameras(cfg.test_cameras_path.empty()
                                              ? cfg.cameras_path
                                              : cfg.test_cameras_path);
  if (cfg.viewselect_init_camera < 0 ||
      cfg.viewselect_init_camera >= static_cast<int>(init_cams.size())) {
    throw pf::ConfigError("viewselect: init_camera out of range");
  }
  pf::ViewSelectConfig vs = cfg.viewselect;
  if (vs.target_points.empty()) {
    throw pf::ConfigError("viewselect: 'quad' target points are required");
  }
  echo_config(cfg);

  const pf::ViewSelectResult result = pf::optimize_viewpoint(
      init_cams[cfg.viewselect_init_camera], field, vs, cfg.seed);
  std::string csv =
      "iter,objective,l_c,l_d,nearest_y,"
      "r00,r01,r02,r10,r11,r12,r20,r21,r22,cx,cy,cz\n";
  for (size_t i = 0; i < result.rows.size(); ++i) {
    const auto& row = result.rows[i];
    const auto& cam = result.trajectory[std::min(i, result.trajectory.size() - 1)];
    csv += std::to_string(row.iter) + "," + csv_double(row.objective) + "," +
           csv_double(row.l_c) + "," + csv_double(row.l_d) + "," +
           csv_double(row.nearest_y);
    for (int r = 0; r < 3; ++r) {
      for (int c2 = 0; c2 < 3; ++c2) csv += "," + csv_double(cam.R(r, c2));
    }
    for (int a = 0; a < 3; ++a) csv += "," + csv_double(cam.c[a]);
    csv += "\n";
  }
  write_text(cfg.out_dir + "/trajectory.csv", csv);
  std::cout << "viewselect finished ("
            << (result.status == pf::ViewSelectStatus::kFinished ? "ok"
                                                                 : "targets lost")
            << "), " << result.rows.size() << " rows -> " << cfg.out_dir << "\n";
  return 0;
}

int cmd_gen_scene(const std::string& fixture_name, const std::string& out_dir) {
  const pf::Fixture fixture = pf::make_fixture(fixture_name);
  const std::string dir = out_dir.empty() ? fixture.name : out_dir;
  pf::write_fixture(dir, fixture);

  // Ready-to-run config mirroring the desk-scale training constants.
  pf::RunConfig cfg;
  cfg.scene_path = "scene.json";
  cfg.cameras_path = "cameras.json";
  cfg.test_cameras_path = "test_cameras.json";
  cfg.checkpoint_prefix = "out/field";
  cfg.out_dir = "out";
  cfg.train = pf::fixture_train_config(fixture);
  if (fixture.holdout_index >= 0) {
    cfg.refine_holdout_index = fixture.holdout_index;
    cfg.floater_center = fixture.floater_center;
    cfg.floater_radius = fixture.floater_radius;
    cfg.floater_sigma = fixture.floater_sigma;
  }
  if (!fixture.quad.empty()) {
    cfg.viewselect.target_points = fixture.quad;
    cfg.viewselect.target_normal = fixture.target_normal;
  }
  write_text(dir + "/config.json", pf::dump_run_config(cfg));
  std::cout << "fixture '" << fixture.name << "' -> " << dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic provenance fields over synthetic volumetric scenes"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string fixture_name;
  std::string gen_out;

  auto add_common = [&](CLI::App* sub, bool config_required = true) {
    sub->add_option("--config", args.config_path, "run configuration JSON")
        ->required(config_required);
    sub->add_option("--seed", [&args](const CLI::results_t& r) {
      args.seed = std::stoull(r[0]);
      return true;
    }, "override the config seed");
    sub->add_option("--out", [&args](const CLI::results_t& r) {
      args.out = r[0];
      return true;
    }, "override the output directory");
  };

  CLI::App* train = app.add_subcommand("train", "train a provenance field");
  add_common(train);
  CLI::App* unc = app.add_subcommand("uncertainty",
                                     "surface NLL report and uncertainty maps");
  add_common(unc);
  CLI::App* eval = app.add_subcommand("eval", "AP/AUC against the oracle");
  add_common(eval);
  CLI::App* refine = app.add_subcommand("refine",
                                        "hinge-regularized density refinement");
  add_common(refine);
  CLI::App* viewselect =
      app.add_subcommand("viewselect", "criteria-based viewpoint optimization");
  add_common(viewselect);
  CLI::App* gen = app.add_subcommand("gen-scene", "emit a bundled fixture");
  gen->add_option("--fixture", fixture_name, "fixture name")
      ->required()
      ->check(CLI::IsMember(pf::fixture_names()));
  gen->add_option("--out", gen_out, "output directory (default: fixture name)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(args);
    if (unc->parsed()) return cmd_uncertainty(args);
    if (eval->parsed()) return cmd_eval(args);
    if (refine->parsed()) return cmd_refine(args);
    if (viewselect->parsed()) return cmd_viewselect(args);
    if (gen->parsed()) return cmd_gen_scene(fixture_name, gen_out);
  } catch (const pf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
