#include "provfield/fixtures.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace provfield {

namespace {

Fixture make_single() {
  SceneBounds bounds(Vector3d(-1, -1, -1), Vector3d(1, 1, 1));
  Fixture f("single", AnalyticScene(bounds, {}));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(0, 0, -2.5), Vector3d::Zero(),
                                          64.0, 64, 64, 1.3, 3.7));
  f.test_cams = f.cams;
  return f;
}

Fixture make_opposed() {
  SceneBounds bounds(Vector3d(-1, -1, -1), Vector3d(1, 1, 1));
  std::vector<Primitive> prims;
  prims.push_back(BoxPrimitive{Vector3d(-0.35, -0.35, 0.25),
                               Vector3d(0.35, 0.35, 0.45), 30.0});
  Fixture f("opposed", AnalyticScene(bounds, std::move(prims)));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(0, 0, -2.5), Vector3d::Zero(),
                                          64.0, 64, 64, 1.3, 3.7));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(0, 0, 2.5), Vector3d::Zero(),
                                          64.0, 64, 64, 1.3, 3.7));
  f.test_cams = f.cams;
  return f;
}

Fixture make_stereo(double angle_deg) {
  SceneBounds bounds(Vector3d(-1, -1, -1), Vector3d(1, 1, 1));
  std::vector<Primitive> prims;
  prims.push_back(SpherePrimitive{Vector3d::Zero(), 0.55, 50.0});
  Fixture f("stereo" + std::to_string(static_cast<int>(angle_deg)),
            AnalyticScene(bounds, std::move(prims)));
  const double half = 0.5 * angle_deg * M_PI / 180.0;
  const double dist = 2.0;
  for (int s = -1; s <= 1; s += 2) {
    const Vector3d c(dist * std::sin(s * half), 0.0, -dist * std::cos(half));
    f.cams.push_back(
        PinholeCamera::look_at(c, Vector3d::Zero(), 128.0, 128, 128, 0.5, 4.5));
  }
  f.test_cams = f.cams;
  return f;
}

Fixture make_floater() {
  // A room whose front wall leaves a corridor gap on the +x side, closed by
  // an opaque backdrop. Two corridor cameras view the gap at different
  // angles; the held-out view looks down the corridor. The injected floater
  // is a faint fog ball on corridor-camera rays (optical depth below the
  // tau_vis keep gate) that the second corridor camera bypasses.
  SceneBounds bounds(Vector3d(-1.5, -1.5, -0.6), Vector3d(1.5, 1.5, 3.6));
  std::vector<Primitive> prims;
  prims.push_back(
      BoxPrimitive{Vector3d(-1.45, -1.45, 2.7), Vector3d(1.0, 1.45, 3.3), 10.0});
  prims.push_back(
      BoxPrimitive{Vector3d(-1.45, -1.45, 3.3), Vector3d(1.45, 1.45, 3.5), 30.0});
  Fixture f("floater", AnalyticScene(bounds, std::move(prims)));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(-0.6, 0, 0), Vector3d(0, 0, 2.7),
                                          48.0, 48, 48, 0.8, 4.8));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(1.2, 0.25, 0.7),
                                          Vector3d(1.2, 0.25, 3.3), 48.0, 48, 48,
                                          0.6, 4.8));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(1.2, -1.1, 0.9),
                                          Vector3d(1.2, 0.55, 3.4), 48.0, 48, 48,
                                          0.6, 5.4));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(1.05, 0.5, 0.8),
                                          Vector3d(1.2, 0.2, 3.3), 80.0, 48, 48,
                                          0.6, 5.0));
  f.holdout_index = 3;
  f.test_cams.push_back(f.cams.back());
  f.floater_center = Vector3d(1.2, 0.25, 1.8);
  f.floater_radius = 0.3;
  f.floater_sigma = 0.15;
  return f;
}

Fixture make_viewselect() {
  SceneBounds bounds(Vector3d(-2, -2, -2), Vector3d(2, 2, 2));
  std::vector<Primitive> prims;
  prims.push_back(
      BoxPrimitive{Vector3d(-0.6, -0.6, 0.9), Vector3d(0.6, 0.6, 1.1), 50.0});
  Fixture f("viewselect", AnalyticScene(bounds, std::move(prims)));
  const Vector3d front(0, 0, 0.9);
  f.cams.push_back(PinholeCamera::look_at(Vector3d(-1.5, 0, -1.8), front, 48.0,
                                          48, 48, 0.8, 4.5));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(0, 0, -2.2), front, 48.0, 48,
                                          48, 0.8, 4.5));
  f.cams.push_back(PinholeCamera::look_at(Vector3d(1.5, 0, -1.8), front, 48.0,
                                          48, 48, 0.8, 4.5));
  f.test_cams.push_back(PinholeCamera::look_at(Vector3d(1.4, 1.1, -1.2), front,
                                               48.0, 48, 48, 0.8, 4.5));
  f.quad = {Vector3d(-0.4, -0.4, 0.9), Vector3d(0.4, -0.4, 0.9),
            Vector3d(0.4, 0.4, 0.9), Vector3d(-0.4, 0.4, 0.9)};
  f.target_normal = Vector3d(0, 0, -1);
  return f;
}

}  // namespace

std::vector<std::string> fixture_names() {
  return {"single", "opposed", "stereo5", "stereo60", "floater", "viewselect"};
}

Fixture make_fixture(const std::string& name) {
  if (name == "single") return make_single();
  if (name == "opposed") return make_opposed();
  if (name == "stereo5") return make_stereo(5.0);
  if (name == "stereo60") return make_stereo(60.0);
  if (name == "floater") return make_floater();
  if (name == "viewselect") return make_viewselect();
  throw std::invalid_argument("unknown fixture: " + name);
}

TrainConfig fixture_train_config(const Fixture& fixture) {
  TrainConfig cfg;
  double near = fixture.cams.front().near;
  double far = fixture.cams.front().far;
  for (const auto& cam : fixture.cams) {
    near = std::min(near, cam.near);
    far = std::max(far, cam.far);
  }
  cfg.field.near = near;
  cfg.field.far = far;
  cfg.field.latent_dim = 16;
  cfg.field.pe_levels = 3;
  cfg.field.hidden = 64;
  cfg.field.pool_size = 8;
  cfg.field.resample_every = 500;
  cfg.rays_per_iter = 24;
  cfg.points_per_ray = 8;
  cfg.iterations = 2000;
  cfg.adam.lr = 2e-3;
  if (fixture.name == "single") {
    // The overfit rig wants fresh-latent accuracy: wider head, frequent
    // pool resampling, and a tighter latent scale for the single mode.
    cfg.field.hidden = 96;
    cfg.field.pool_size = 16;
    cfg.field.resample_every = 200;
    cfg.field.latent_scale = 0.3;
    cfg.rays_per_iter = 32;
    cfg.adam.lr = 4e-3;
  }
  return cfg;
}

void write_fixture(const std::string& dir, const Fixture& fixture) {
  std::filesystem::create_directories(dir);
  save_scene(dir + "/scene.json", fixture.scene);
  save_cameras(dir + "/cameras.json", fixture.cams);
  save_cameras(dir + "/test_cameras.json", fixture.test_cams);
  nlohmann::json j = {{"name", fixture.name}};
  if (fixture.holdout_index >= 0) {
    j["holdout_index"] = fixture.holdout_index;
    j["floater"] = {{"center",
                     {fixture.floater_center.x(), fixture.floater_center.y(),
                      fixture.floater_center.z()}},
                    {"radius", fixture.floater_radius},
                    {"sigma", fixture.floater_sigma}};
  }
  if (!fixture.quad.empty()) {
    j["quad"] = nlohmann::json::array();
    for (const auto& q : fixture.quad) j["quad"].push_back({q.x(), q.y(), q.z()});
    j["normal"] = {fixture.target_normal.x(), fixture.target_normal.y(),
                   fixture.target_normal.z()};
  }
  std::ofstream out(dir + "/fixture.json");
  if (!out) throw std::runtime_error("write_fixture: cannot open " + dir);
  out << j.dump(2) << "\n";
}

}  // namespace provfield
