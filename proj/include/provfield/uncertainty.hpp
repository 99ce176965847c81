#pragma once

#include <Eigen/Core>

#include <optional>
#include <span>
#include <vector>

#include "provfield/camera.hpp"
#include "provfield/common.hpp"
#include "provfield/provenance.hpp"
#include "provfield/scene.hpp"

namespace provfield {

// Shared synthetic intrinsics for pseudo cameras. near/far are filled in per
// camera so that the frustum spans the scene bound.
struct PseudoIntrinsics {
  int width = 128;
  int height = 128;
  double focal = 128.0;  // fx = fy
};

// A pseudo camera observes x exactly at its principal point.
struct PseudoCamera {
  PinholeCamera cam;
  Vector2d center_pixel;  // Proj(x), the (noise-free) observation
};

// One camera per sample: center at the recovered observing location,
// principal axis along d-hat, right-handed frame completed around it.
// Throws when samples is empty (uncertainty is undefined).
std::vector<PseudoCamera> build_pseudo_cameras(const Vector3d& x,
                                               std::span<const ProvenanceSample> samples,
                                               const PseudoIntrinsics& intr,
                                               const SceneBounds& bounds);

// Isotropic 2-D Gaussian density of center_pixel under mean Proj(x_query);
// zero when x_query is outside the camera frustum.
double observation_likelihood(const PseudoCamera& cam, const Vector3d& x_query,
                              const Vector2d& center_pixel, double sigma_px);

struct PosteriorEstimate {
  double likelihood = 0.0;  // density, 1/m^3
  double nll = 0.0;
  long n_used = 0;
  double stderr_rel = 0.0;  // relative standard error of the denominator
};

struct PosteriorDegenerate : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Posterior density of x given its pseudo observations, with a uniform prior
// over `bounds`. The denominator integral is importance-sampled over the
// intersection of the 5-sigma pixel-window frustums (witness = x); a single
// camera short-circuits to the closed form. Throws PosteriorDegenerate on a
// zero volume estimate.
PosteriorEstimate posterior_importance_sampling(const Vector3d& x,
                                                std::span<const PseudoCamera> cams,
                                                double sigma_px, long n,
                                                uint64_t seed,
                                                const SceneBounds& bounds);

// Dense Riemann-sum evaluation of the same posterior over a grid_res^3
// lattice on `bounds`; exact up to discretization. cams may be empty, in
// which case the posterior is the uniform prior 1/Vol.
PosteriorEstimate posterior_brute_force(const Vector3d& x,
                                        std::span<const PseudoCamera> cams,
                                        double sigma_px, int grid_res,
                                        const SceneBounds& bounds);

struct UncertaintyConfig {
  double sigma_px = 2.0;
  long n_importance = 1'000'000;  // surface-point NLL evaluation
  long n_map = 20'000;            // per-pixel maps
  int samples_per_point = 16;     // provenance draws per query
  double v_min = 0.7;
  PseudoIntrinsics intrinsics{};
  int map_stride = 8;
  int depth_samples = 256;
  int points_per_view = 32;
  uint64_t seed = 1;
};

struct UncertaintyMaps {
  int cols = 0, rows = 0;  // strided dimensions
  std::vector<float> nll;           // raw NLL, sentinel = max finite + 1
  std::vector<float> depth;         // rendered expected depth
  std::vector<float> depth_error;   // |rendered - surface-march depth|
  std::vector<float> nll_norm;      // min-max normalized per image
  std::vector<float> depth_error_norm;
  std::vector<uint8_t> sentinel;    // 1 where no posterior was available
};

// Per-pixel (strided) uncertainty and depth-error images for one test view.
UncertaintyMaps uncertainty_map(const ProvenanceField& field,
                                const DensityScene& scene,
                                const PinholeCamera& cam,
                                const UncertaintyConfig& cfg);

struct SurfaceNll {
  double mean_nll = 0.0;
  long n_points = 0;
  long n_sentinel = 0;
  std::vector<double> per_point;  // sentinel entries use max finite + 1
};

// Mean posterior NLL over surface points sampled from the test cameras.
// Points with no kept provenance samples (or a degenerate posterior) are
// sentinel contributions. Throws when no surface point exists at all.
SurfaceNll nll_of_surface(const ProvenanceField& field, const DensityScene& scene,
                          std::span<const PinholeCamera> cams_test,
                          const UncertaintyConfig& cfg);

}  // namespace provfield
