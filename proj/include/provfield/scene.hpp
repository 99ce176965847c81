#pragma once

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "provfield/camera.hpp"
#include "provfield/common.hpp"

namespace provfield {

// A density field over a bounded domain. Transmittance along a ray is
// T(t) = exp(-integral of sigma from ray.near to t); how the integral is
// evaluated (closed form vs quadrature) depends on the concrete scene.
class DensityScene {
 public:
  virtual ~DensityScene() = default;
  virtual double density_at(const Vector3d& x) const = 0;
  virtual double transmittance(const Ray& ray, double t) const = 0;
  virtual const SceneBounds& bounds() const = 0;
};

struct SpherePrimitive {
  Vector3d center;
  double radius;
  double density;
};

struct BoxPrimitive {
  Vector3d min;
  Vector3d max;
  double density;
};

using Primitive = std::variant<SpherePrimitive, BoxPrimitive>;

// Union of constant-density primitives; densities add where primitives
// overlap, which keeps the transmittance integral exactly piecewise linear
// and lets us evaluate it in closed form from ray-primitive intervals.
class AnalyticScene final : public DensityScene {
 public:
  AnalyticScene(SceneBounds bounds, std::vector<Primitive> primitives);

  double density_at(const Vector3d& x) const override;
  double transmittance(const Ray& ray, double t) const override;
  const SceneBounds& bounds() const override { return bounds_; }
  const std::vector<Primitive>& primitives() const { return primitives_; }
  bool empty() const { return primitives_.empty(); }

 private:
  SceneBounds bounds_;
  std::vector<Primitive> primitives_;
};

// Trilinearly interpolated density grid with softplus-mapped parameters;
// the raw parameters are the optimization variables for the regularizer
// experiment. Grid nodes sit on a res^3 lattice spanning the bounds.
class VoxelField final : public DensityScene {
 public:
  VoxelField(SceneBounds bounds, int res, int n_quadrature = 256);

  double density_at(const Vector3d& x) const override;
  double transmittance(const Ray& ray, double t) const override;
  const SceneBounds& bounds() const override { return bounds_; }

  // Same quadrature as transmittance(); accumulates
  // upstream * dT/draw into grad and returns T.
  double transmittance_grad(const Ray& ray, double t, double upstream,
                            Eigen::VectorXd& grad) const;

  // Expected depth along the ray using the renderer's incremental
  // discretization, with optional gradient accumulation (upstream * dD/draw).
  double render_depth_grad(const Ray& ray, int n_samples, double upstream,
                           Eigen::VectorXd* grad) const;

  int resolution() const { return res_; }
  int n_quadrature() const { return n_quadrature_; }
  Eigen::VectorXd& raw() { return raw_; }
  const Eigen::VectorXd& raw() const { return raw_; }

  // Node-sampled fit of another scene's density (sigma clamped to
  // sigma_floor to keep the softplus inverse finite).
  static VoxelField from_scene(const DensityScene& scene, int res,
                               int n_quadrature = 256,
                               double sigma_floor = 1e-9);

  // Adds a constant-density ball in sigma space (raw params adjusted).
  void add_density_ball(const Vector3d& center, double radius, double sigma);

 private:
  struct Corner {
    int idx;
    double weight;
  };
  // 8 trilerp corners; returns false outside the bounds.
  bool corners_at(const Vector3d& x, Corner out[8]) const;

  SceneBounds bounds_;
  int res_;
  int n_quadrature_;
  Eigen::VectorXd raw_;
};

// Expected depth from the sigma*T*t / sigma*T quadrature; returns ray.far
// when the accumulated opacity is below eps_opacity.
double render_depth(const DensityScene& scene, const Ray& ray, int n_samples,
                    double eps_opacity = 1e-6);

// First depth where transmittance drops to <= 0.5 (bisection-refined);
// nullopt when the ray never reaches that opacity.
std::optional<double> surface_depth(const DensityScene& scene, const Ray& ray,
                                    int n_march = 256);

struct SurfacePoint {
  Vector3d position;
  int camera_index;
  Vector2d pixel;
};

// Random-pixel surface samples per camera; misses are skipped.
std::vector<SurfacePoint> sample_surface_points(const DensityScene& scene,
                                                std::span<const PinholeCamera> cams,
                                                int per_view, uint64_t seed);

// Scene file: JSON {bounds:{min,max}, primitives:[{type, params..., density}]}.
AnalyticScene load_scene(const std::string& path);
void save_scene(const std::string& path, const AnalyticScene& scene);

}  // namespace provfield
