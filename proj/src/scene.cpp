#include "provfield/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace provfield {

namespace {

bool sphere_contains(const SpherePrimitive& s, const Vector3d& x) {
  return (x - s.center).squaredNorm() <= s.radius * s.radius;
}

bool box_contains(const BoxPrimitive& b, const Vector3d& x) {
  return x.x() >= b.min.x() && x.x() <= b.max.x() && x.y() >= b.min.y() &&
         x.y() <= b.max.y() && x.z() >= b.min.z() && x.z() <= b.max.z();
}

// Parametric interval of ray-primitive overlap; false on miss.
bool sphere_interval(const SpherePrimitive& s, const Ray& ray, double& t0,
                     double& t1) {
  const Vector3d oc = ray.origin - s.center;
  const double b = oc.dot(ray.dir);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc <= 0.0) return false;
  const double sq = std::sqrt(disc);
  t0 = -b - sq;
  t1 = -b + sq;
  return true;
}

bool box_interval(const BoxPrimitive& b, const Ray& ray, double& t0, double& t1) {
  t0 = -std::numeric_limits<double>::infinity();
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ray.dir[a]) < 1e-300) {
      if (ray.origin[a] < b.min[a] || ray.origin[a] > b.max[a]) return false;
      continue;
    }
    double ta = (b.min[a] - ray.origin[a]) / ray.dir[a];
    double tb = (b.max[a] - ray.origin[a]) / ray.dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 < t1;
}

double primitive_density(const Primitive& p) {
  return std::visit([](const auto& q) { return q.density; }, p);
}

}  // namespace

AnalyticScene::AnalyticScene(SceneBounds bounds, std::vector<Primitive> primitives)
    : bounds_(bounds), primitives_(std::move(primitives)) {
  for (const auto& p : primitives_) {
    const double d = primitive_density(p);
    if (!(std::isfinite(d) && d >= 0.0)) {
      throw std::invalid_argument("AnalyticScene: density must be finite and >= 0");
    }
    const bool inside = std::visit(
        [&](const auto& q) {
          using T = std::decay_t<decltype(q)>;
          if constexpr (std::is_same_v<T, SpherePrimitive>) {
            return bounds_.contains(q.center - Vector3d::Constant(q.radius)) &&
                   bounds_.contains(q.center + Vector3d::Constant(q.radius));
          } else {
            return bounds_.contains(q.min) && bounds_.contains(q.max);
          }
        },
        p);
    if (!inside) {
      throw std::invalid_argument("AnalyticScene: primitive outside bounds");
    }
  }
}

double AnalyticScene::density_at(const Vector3d& x) const {
  if (!bounds_.contains(x)) return 0.0;
  double sigma = 0.0;
  for (const auto& p : primitives_) {
    const bool inside = std::visit(
        [&](const auto& q) {
          using T = std::decay_t<decltype(q)>;
          if constexpr (std::is_same_v<T, SpherePrimitive>) {
            return sphere_contains(q, x);
          } else {
            return box_contains(q, x);
          }
        },
        p);
    if (inside) sigma += primitive_density(p);
  }
  return sigma;
}

double AnalyticScene::transmittance(const Ray& ray, double t) const {
  if (t < ray.near) {
    throw std::invalid_argument("transmittance: t < ray.near");
  }
  double tau = 0.0;
  for (const auto& p : primitives_) {
    double t0, t1;
    const bool hit = std::visit(
        [&](const auto& q) {
          using T = std::decay_t<decltype(q)>;
          if constexpr (std::is_same_v<T, SpherePrimitive>) {
            return sphere_interval(q, ray, t0, t1);
          } else {
            return box_interval(q, ray, t0, t1);
          }
        },
        p);
    if (!hit) continue;
    const double lo = std::max(t0, ray.near);
    const double hi = std::min(t1, t);
    if (hi > lo) tau += primitive_density(p) * (hi - lo);
  }
  return std::exp(-tau);
}

// ---------------------------------------------------------------------------

VoxelField::VoxelField(SceneBounds bounds, int res, int n_quadrature)
    : bounds_(bounds), res_(res), n_quadrature_(n_quadrature) {
  if (res < 2) throw std::invalid_argument("VoxelField: res must be >= 2");
  if (n_quadrature < 1) throw std::invalid_argument("VoxelField: n_quadrature >= 1");
  // softplus(-22) ~ 3e-10 keeps empty rays below the renderer's opacity
  // epsilon, so unhit pixels still report far.
  raw_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(res) * res * res, -22.0);
}

bool VoxelField::corners_at(const Vector3d& x, Corner out[8]) const {
  if (!bounds_.contains(x)) return false;
  const Vector3d ext = bounds_.extent();
  double u[3];
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    u[a] = (x[a] - bounds_.min[a]) / ext[a] * (res_ - 1);
    u[a] = std::clamp(u[a], 0.0, static_cast<double>(res_ - 1) - 1e-12);
    i0[a] = static_cast<int>(u[a]);
    f[a] = u[a] - i0[a];
  }
  int k = 0;
  for (int dx = 0; dx < 2; ++dx) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dz = 0; dz < 2; ++dz) {
        const int ix = i0[0] + dx, iy = i0[1] + dy, iz = i0[2] + dz;
        const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) *
                         (dz ? f[2] : 1.0 - f[2]);
        out[k].idx = (ix * res_ + iy) * res_ + iz;
        out[k].weight = w;
        ++k;
      }
    }
  }
  return true;
}

double VoxelField::density_at(const Vector3d& x) const {
  Corner c[8];
  if (!corners_at(x, c)) return 0.0;
  double sigma = 0.0;
  for (int k = 0; k < 8; ++k) sigma += c[k].weight * softplus(raw_[c[k].idx]);
  return sigma;
}

double VoxelField::transmittance(const Ray& ray, double t) const {
  if (t < ray.near) throw std::invalid_argument("transmittance: t < ray.near");
  if (t == ray.near) return 1.0;
  const double dt = (t - ray.near) / n_quadrature_;
  double tau = 0.0;
  for (int q = 0; q < n_quadrature_; ++q) {
    const double s = ray.near + (q + 0.5) * dt;
    tau += density_at(ray.at(s));
  }
  return std::exp(-tau * dt);
}

double VoxelField::transmittance_grad(const Ray& ray, double t, double upstream,
                                      Eigen::VectorXd& grad) const {
  if (t < ray.near) throw std::invalid_argument("transmittance_grad: t < ray.near");
  if (t == ray.near) return 1.0;
  const double dt = (t - ray.near) / n_quadrature_;
  double tau = 0.0;
  for (int q = 0; q < n_quadrature_; ++q) {
    const double s = ray.near + (q + 0.5) * dt;
    tau += density_at(ray.at(s));
  }
  const double T = std::exp(-tau * dt);
  // dT/dsigma_q = -dt * T for every quadrature sample.
  const double coef = -dt * T * upstream;
  Corner c[8];
  for (int q = 0; q < n_quadrature_; ++q) {
    const double s = ray.near + (q + 0.5) * dt;
    if (!corners_at(ray.at(s), c)) continue;
    for (int k = 0; k < 8; ++k) {
      grad[c[k].idx] += coef * c[k].weight * sigmoid(raw_[c[k].idx]);
    }
  }
  return T;
}

double VoxelField::render_depth_grad(const Ray& ray, int n_samples,
                                     double upstream, Eigen::VectorXd* grad) const {
  if (n_samples < 2) throw std::invalid_argument("render_depth: n_samples >= 2");
  const double dt = (ray.far - ray.near) / n_samples;
  std::vector<double> sig(n_samples), tt(n_samples), Tq(n_samples);
  double tau = 0.0;
  double A = 0.0, B = 0.0;
  for (int q = 0; q < n_samples; ++q) {
    const double t = ray.near + (q + 0.5) * dt;
    tt[q] = t;
    sig[q] = density_at(ray.at(t));
    const double tau_mid = tau + 0.5 * sig[q] * dt;
    Tq[q] = std::exp(-tau_mid);
    A += sig[q] * Tq[q] * tt[q] * dt;
    B += sig[q] * Tq[q] * dt;
    tau += sig[q] * dt;
  }
  constexpr double kEps = 1e-6;
  if (B < kEps) return ray.far;  // no opacity: depth pinned at far, grad 0
  const double depth = A / B;
  if (grad == nullptr || upstream == 0.0) return depth;

  // dA/dsig_p = T_p t_p dt - dt * (0.5 sig_p T_p t_p dt + suffix_{q>p} sig_q T_q t_q dt)
  // and likewise for B; assembled with suffix sums.
  std::vector<double> sufA(n_samples + 1, 0.0), sufB(n_samples + 1, 0.0);
  for (int q = n_samples - 1; q >= 0; --q) {
    sufA[q] = sufA[q + 1] + sig[q] * Tq[q] * tt[q] * dt;
    sufB[q] = sufB[q + 1] + sig[q] * Tq[q] * dt;
  }
  Corner c[8];
  for (int p = 0; p < n_samples; ++p) {
    const double dA = Tq[p] * tt[p] * dt -
                      dt * (0.5 * sig[p] * Tq[p] * tt[p] * dt + sufA[p + 1]);
    const double dB =
        Tq[p] * dt - dt * (0.5 * sig[p] * Tq[p] * dt + sufB[p + 1]);
    const double dDepth = (dA * B - A * dB) / (B * B);
    const double coef = upstream * dDepth;
    if (coef == 0.0) continue;
    if (!corners_at(ray.at(tt[p]), c)) continue;
    for (int k = 0; k < 8; ++k) {
      (*grad)[c[k].idx] += coef * c[k].weight * sigmoid(raw_[c[k].idx]);
    }
  }
  return depth;
}

VoxelField VoxelField::from_scene(const DensityScene& scene, int res,
                                  int n_quadrature, double sigma_floor) {
  VoxelField v(scene.bounds(), res, n_quadrature);
  const Vector3d ext = scene.bounds().extent();
  for (int i = 0; i < res; ++i) {
    for (int j = 0; j < res; ++j) {
      for (int k = 0; k < res; ++k) {
        const Vector3d p = scene.bounds().min +
                           Vector3d(ext.x() * i / (res - 1), ext.y() * j / (res - 1),
                                    ext.z() * k / (res - 1));
        const double sigma = std::max(scene.density_at(p), sigma_floor);
        v.raw_[(i * res + j) * res + k] = softplus_inverse(sigma);
      }
    }
  }
  return v;
}

void VoxelField::add_density_ball(const Vector3d& center, double radius,
                                  double sigma) {
  const Vector3d ext = bounds_.extent();
  for (int i = 0; i < res_; ++i) {
    for (int j = 0; j < res_; ++j) {
      for (int k = 0; k < res_; ++k) {
        const Vector3d p = bounds_.min + Vector3d(ext.x() * i / (res_ - 1),
                                                  ext.y() * j / (res_ - 1),
                                                  ext.z() * k / (res_ - 1));
        if ((p - center).norm() <= radius) {
          const Eigen::Index idx = (i * res_ + j) * res_ + k;
          const double cur = softplus(raw_[idx]);
          raw_[idx] = softplus_inverse(cur + sigma);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

double render_depth(const DensityScene& scene, const Ray& ray, int n_samples,
                    double eps_opacity) {
  if (n_samples < 2) throw std::invalid_argument("render_depth: n_samples >= 2");
  const double dt = (ray.far - ray.near) / n_samples;
  double tau = 0.0, A = 0.0, B = 0.0;
  for (int q = 0; q < n_samples; ++q) {
    const double t = ray.near + (q + 0.5) * dt;
    const double sigma = scene.density_at(ray.at(t));
    const double T = std::exp(-(tau + 0.5 * sigma * dt));
    A += sigma * T * t * dt;
    B += sigma * T * dt;
    tau += sigma * dt;
  }
  if (B < eps_opacity) return ray.far;
  return A / B;
}

std::optional<double> surface_depth(const DensityScene& scene, const Ray& ray,
                                    int n_march) {
  const double dt = (ray.far - ray.near) / n_march;
  double prev = ray.near;
  for (int q = 1; q <= n_march; ++q) {
    const double t = ray.near + q * dt;
    if (scene.transmittance(ray, t) <= 0.5) {
      double lo = prev, hi = t;
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (scene.transmittance(ray, mid) <= 0.5) {
          hi = mid;
        } else {
          lo = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
    prev = t;
  }
  return std::nullopt;
}

std::vector<SurfacePoint> sample_surface_points(const DensityScene& scene,
                                                std::span<const PinholeCamera> cams,
                                                int per_view, uint64_t seed) {
  std::vector<SurfacePoint> out;
  Rng rng(seed);
  for (size_t ci = 0; ci < cams.size(); ++ci) {
    const auto& cam = cams[ci];
    for (int s = 0; s < per_view; ++s) {
      const Vector2d px(rng.uniform(0.0, cam.width), rng.uniform(0.0, cam.height));
      const Ray ray = pixel_ray(cam, px);
      const auto depth = surface_depth(scene, ray);
      if (!depth) continue;
      out.push_back({ray.at(*depth), static_cast<int>(ci), px});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Vector3d vec3_from_json(const nlohmann::json& j) {
  if (j.size() != 3) throw std::runtime_error("scene: expected 3-vector");
  return Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

AnalyticScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scene: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  SceneBounds bounds(vec3_from_json(j.at("bounds").at("min")),
                     vec3_from_json(j.at("bounds").at("max")));
  std::vector<Primitive> prims;
  for (const auto& p : j.value("primitives", nlohmann::json::array())) {
    const std::string type = p.at("type");
    if (type == "sphere") {
      prims.push_back(SpherePrimitive{vec3_from_json(p.at("center")),
                                      p.at("radius").get<double>(),
                                      p.at("density").get<double>()});
    } else if (type == "box") {
      prims.push_back(BoxPrimitive{vec3_from_json(p.at("min")),
                                   vec3_from_json(p.at("max")),
                                   p.at("density").get<double>()});
    } else {
      throw std::runtime_error("load_scene: unknown primitive type " + type);
    }
  }
  return AnalyticScene(bounds, std::move(prims));
}

void save_scene(const std::string& path, const AnalyticScene& scene) {
  nlohmann::json j;
  const auto& b = scene.bounds();
  j["bounds"] = {{"min", {b.min.x(), b.min.y(), b.min.z()}},
                 {"max", {b.max.x(), b.max.y(), b.max.z()}}};
  j["primitives"] = nlohmann::json::array();
  for (const auto& p : scene.primitives()) {
    std::visit(
        [&](const auto& q) {
          using T = std::decay_t<decltype(q)>;
          if constexpr (std::is_same_v<T, SpherePrimitive>) {
            j["primitives"].push_back(
                {{"type", "sphere"},
                 {"center", {q.center.x(), q.center.y(), q.center.z()}},
                 {"radius", q.radius},
                 {"density", q.density}});
          } else {
            j["primitives"].push_back({{"type", "box"},
                                       {"min", {q.min.x(), q.min.y(), q.min.z()}},
                                       {"max", {q.max.x(), q.max.y(), q.max.z()}},
                                       {"density", q.density}});
          }
        },
        p);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_scene: cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace provfield
