#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "provfield/common.hpp"

namespace provfield {

// Pinhole camera. R maps camera coordinates to world coordinates, so its
// columns are the camera axes in the world frame; R.col(2) is the principal
// axis. Projection uses the camera-frame point R^T (x - c) with +z forward
// and pixel v growing along the camera +y axis.
struct PinholeCamera {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Vector3d c = Vector3d::Zero();
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  double near = 0.1, far = 10.0;

  PinholeCamera() = default;
  PinholeCamera(const Eigen::Matrix3d& R_, const Vector3d& c_, double fx_,
                double fy_, double cx_, double cy_, int w, int h, double near_,
                double far_);

  Vector3d principal_axis() const { return R.col(2); }
  Vector3d world_to_camera(const Vector3d& x) const {
    return R.transpose() * (x - c);
  }

  // Camera centered at `center` with principal axis toward `look_at`.
  static PinholeCamera look_at(const Vector3d& center, const Vector3d& target,
                               double f, int w, int h, double near, double far);
};

struct Ray {
  Vector3d origin = Vector3d::Zero();
  Vector3d dir = Vector3d::UnitZ();  // unit length
  double near = 0.0;
  double far = 1.0;

  Vector3d at(double t) const { return origin + t * dir; }
};

// Projection result; outside-marker when depth or pixel is out of range.
std::optional<Vector2d> project_point(const PinholeCamera& cam, const Vector3d& x);

// Ray through a pixel (pixel must lie inside the image).
Ray pixel_ray(const PinholeCamera& cam, const Vector2d& pixel);

// Pixel window of a frustum: full image, or a square delta-neighborhood of a
// center pixel clamped to image bounds.
struct FrustumRegion {
  PinholeCamera cam;
  double u_min = 0.0, u_max = 0.0;
  double v_min = 0.0, v_max = 0.0;
  double depth_min = 0.0, depth_max = 0.0;

  static FrustumRegion full(const PinholeCamera& cam);
  static FrustumRegion pixel_window(const PinholeCamera& cam,
                                    const Vector2d& center, double delta);
};

bool frustum_contains(const FrustumRegion& region, const Vector3d& x);

// World-space AABB of the region's truncated pyramid (window corners swept
// from depth_min to depth_max).
SceneBounds frustum_aabb(const FrustumRegion& region);

// Exact volume of one region's truncated pyramid.
double frustum_volume(const FrustumRegion& region);

struct FrustumSamples {
  std::vector<Vector3d> points;  // uniform over the intersection
  double volume_estimate = 0.0;  // unbiased: acceptance rate x proposal volume
  double proposal_volume = 0.0;
  long n_proposed = 0;
};

// Rejection sampling of the intersection of regions from the AABB of the
// smallest-volume region. Proposes n points; empty acceptance with no witness
// is an error, with a witness the witness itself is returned (volume estimate
// stays at the unbiased zero).
FrustumSamples sample_frustum_intersection(
    std::span<const FrustumRegion> regions, long n, uint64_t seed,
    const std::optional<Vector3d>& witness = std::nullopt);

// R <- R exp([omega]x), c <- c + dc, re-orthonormalized onto SO(3).
PinholeCamera pose_retract(const PinholeCamera& cam, const Vector3d& omega,
                           const Vector3d& dc);

Eigen::Matrix3d rodrigues(const Vector3d& omega);

// Camera set file: JSON array of
// {R: 9 row-major, c: 3, fx, fy, cx, cy, width, height, near, far}.
std::vector<PinholeCamera> load_cameras(const std::string& path);
void save_cameras(const std::string& path, std::span<const PinholeCamera> cams);

}  // namespace provfield
