#pragma once

#include <string>

#include "provfield/applications.hpp"
#include "provfield/evaluation.hpp"
#include "provfield/provenance.hpp"
#include "provfield/uncertainty.hpp"

namespace provfield {

// One JSON file per run. Every field has a default; unknown keys are
// rejected; file paths are resolved against the config file's directory and
// the echoed resolved config carries them absolute.
struct RunConfig {
  std::string scene_path;
  std::string cameras_path;
  std::string test_cameras_path;
  std::string checkpoint_prefix;  // consumed by uncertainty/eval/refine/viewselect
  std::string out_dir = "out";
  uint64_t seed = 1;

  TrainConfig train{};

  UncertaintyConfig uncertainty{};

  EvalProtocolConfig eval{};
  int eval_schedule_count = 500;
  bool eval_per_point = false;

  RegularizerConfig refine{};
  int refine_voxel_res = 22;
  int refine_n_quadrature = 64;
  int refine_holdout_index = 3;
  Vector3d floater_center = Vector3d(1.2, 0.25, 1.8);
  double floater_radius = 0.3;
  double floater_sigma = 0.15;

  ViewSelectConfig viewselect{};
  int viewselect_init_camera = 0;  // index into the test cameras

  std::string fixture;  // gen-scene only
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parses and resolves a config file. Throws ConfigError on unknown keys,
// type errors, or unreadable files.
RunConfig load_run_config(const std::string& path);

// Serializes the fully resolved config (stable key order and formatting).
std::string dump_run_config(const RunConfig& cfg);

}  // namespace provfield
