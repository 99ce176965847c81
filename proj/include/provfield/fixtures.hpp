#pragma once

#include <string>
#include <vector>

#include "provfield/applications.hpp"
#include "provfield/camera.hpp"
#include "provfield/provenance.hpp"
#include "provfield/scene.hpp"

namespace provfield {

// Bundled synthetic rigs: "single" (one camera, empty scene), "opposed"
// (facing camera pair with an occluding slab), "stereo5"/"stereo60"
// (two-camera rigs at the given ray angle around a sphere), "floater"
// (wall + three training cameras + a held-out view; the floater blob is
// injected into the voxel copy, not the ground truth), and "viewselect"
// (plaque scene with a camera ring and a quad/normal target).
struct Fixture {
  Fixture(std::string name_, AnalyticScene scene_)
      : name(std::move(name_)), scene(std::move(scene_)) {}

  std::string name;
  AnalyticScene scene;
  std::vector<PinholeCamera> cams;       // training cameras
  std::vector<PinholeCamera> test_cams;  // evaluation cameras

  // floater rig
  int holdout_index = -1;
  Vector3d floater_center = Vector3d::Zero();
  double floater_radius = 0.0;
  double floater_sigma = 0.0;

  // viewselect rig
  std::vector<Vector3d> quad;  // 4 coplanar target corners
  Vector3d target_normal = -Vector3d::UnitZ();
};

Fixture make_fixture(const std::string& name);
std::vector<std::string> fixture_names();

// Desk-scale training configuration tuned per fixture (near/far from the
// fixture cameras, small widths so CPU runs stay in the minutes).
TrainConfig fixture_train_config(const Fixture& fixture);

// Writes scene.json, cameras.json, test_cameras.json and fixture.json
// (auxiliary rig parameters) into the directory.
void write_fixture(const std::string& dir, const Fixture& fixture);

}  // namespace provfield
