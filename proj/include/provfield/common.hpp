#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace provfield {

using Eigen::Vector2d;
using Eigen::Vector3d;

// Deterministic RNG. Uniform/normal draws are generated from explicit
// bit-level formulas (not std:: distributions) so that a given seed yields
// the same stream on every platform and compiler.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller; second value cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vec(int n, double scale) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * normal();
    return v;
  }

  // Independent child stream; advances this stream by one draw.
  Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 engine_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Axis-aligned scene bound box (the domain the field is defined over).
struct SceneBounds {
  Vector3d min = Vector3d::Zero();
  Vector3d max = Vector3d::Ones();

  SceneBounds() = default;
  SceneBounds(const Vector3d& lo, const Vector3d& hi) : min(lo), max(hi) {
    if (!(min.x() < max.x() && min.y() < max.y() && min.z() < max.z())) {
      throw std::invalid_argument("SceneBounds: min must be < max componentwise");
    }
  }

  bool contains(const Vector3d& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() &&
           p.y() <= max.y() && p.z() >= min.z() && p.z() <= max.z();
  }

  Vector3d extent() const { return max - min; }
  double volume() const { return extent().prod(); }
  double diagonal() const { return extent().norm(); }
  Vector3d center() const { return 0.5 * (min + max); }

  Vector3d sample(Rng& rng) const {
    return Vector3d(rng.uniform(min.x(), max.x()), rng.uniform(min.y(), max.y()),
                    rng.uniform(min.z(), max.z()));
  }

  // Parametric interval where p + t*d is inside the box, clipped to [t0, t1].
  // Returns false if the segment misses the box.
  bool clip_ray(const Vector3d& p, const Vector3d& d, double& t0, double& t1) const {
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d[a]) < 1e-300) {
        if (p[a] < min[a] || p[a] > max[a]) return false;
        continue;
      }
      double ta = (min[a] - p[a]) / d[a];
      double tb = (max[a] - p[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    return t0 <= t1;
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}
// Inverse of softplus; input must be > 0.
inline double softplus_inverse(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

}  // namespace provfield
