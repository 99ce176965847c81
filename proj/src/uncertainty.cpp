#include "provfield/uncertainty.hpp"

#include <algorithm>
#include <cmath>

namespace provfield {

namespace {

// Depth range of the principal axis inside the scene bound, clipped to the
// camera's clip planes. Used by the single-camera closed form.
bool axis_depth_range(const PinholeCamera& cam, const SceneBounds& bounds,
                      double& z0, double& z1) {
  z0 = cam.near;
  z1 = cam.far;
  return bounds.clip_ray(cam.c, cam.principal_axis(), z0, z1) && z1 > z0;
}

double gaussian2(double r2, double sigma) {
  return std::exp(-0.5 * r2 / (sigma * sigma)) / (2.0 * M_PI * sigma * sigma);
}

}  // namespace

std::vector<PseudoCamera> build_pseudo_cameras(
    const Vector3d& x, std::span<const ProvenanceSample> samples,
    const PseudoIntrinsics& intr, const SceneBounds& bounds) {
  if (samples.empty()) {
    throw std::invalid_argument("build_pseudo_cameras: no samples");
  }
  std::vector<PseudoCamera> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const Vector3d y = recover_observation_location(x, s);
    const Vector3d axis = s.d / s.d.norm();
    // Frustum must span the scene bound plus the camera-to-x distance.
    double far_corner = (x - y).norm();
    for (int cx = 0; cx < 2; ++cx) {
      for (int cy = 0; cy < 2; ++cy) {
        for (int cz = 0; cz < 2; ++cz) {
          const Vector3d corner(cx ? bounds.max.x() : bounds.min.x(),
                                cy ? bounds.max.y() : bounds.min.y(),
                                cz ? bounds.max.z() : bounds.min.z());
          far_corner = std::max(far_corner, (corner - y).norm());
        }
      }
    }
    const double near = 1e-4 * bounds.diagonal();
    const double far = 1.25 * far_corner;
    PseudoCamera pc;
    pc.cam = PinholeCamera::look_at(y, y + axis, intr.focal, intr.width,
                                    intr.height, near, far);
    const auto proj = project_point(pc.cam, x);
    if (!proj) {
      throw std::runtime_error("build_pseudo_cameras: x outside its own frustum");
    }
    pc.center_pixel = *proj;
    out.push_back(pc);
  }
  return out;
}

double observation_likelihood(const PseudoCamera& cam, const Vector3d& x_query,
                              const Vector2d& center_pixel, double sigma_px) {
  if (!(sigma_px > 0.0)) {
    throw std::invalid_argument("observation_likelihood: sigma_px > 0");
  }
  const auto proj = project_point(cam.cam, x_query);
  if (!proj) return 0.0;
  return gaussian2((*proj - center_pixel).squaredNorm(), sigma_px);
}

PosteriorEstimate posterior_importance_sampling(const Vector3d& x,
                                                std::span<const PseudoCamera> cams,
                                                double sigma_px, long n,
                                                uint64_t seed,
                                                const SceneBounds& bounds) {
  if (cams.empty()) {
    throw std::invalid_argument("posterior_importance_sampling: no cameras");
  }
  if (n < 100) throw std::invalid_argument("posterior_importance_sampling: n >= 100");

  const double numerator = [&] {
    double p = 1.0;
    for (const auto& cam : cams) {
      p *= observation_likelihood(cam, x, cam.center_pixel, sigma_px);
    }
    return p;
  }();

  PosteriorEstimate est;
  est.n_used = n;

  if (cams.size() == 1) {
    // Closed form: at depth z the pixel-window mass is erf-bounded and the
    // world-space Jacobian is z^2/(fx fy), so the denominator integral is
    // mass * (z1^3 - z0^3) / (3 fx fy) along the axis segment inside the bound.
    const auto& cam = cams[0].cam;
    double z0, z1;
    if (!axis_depth_range(cam, bounds, z0, z1)) {
      throw PosteriorDegenerate("single-camera frustum misses the scene bound");
    }
    const double mass_1d = std::erf(5.0 / std::sqrt(2.0));
    const double denom = mass_1d * mass_1d * (z1 * z1 * z1 - z0 * z0 * z0) /
                         (3.0 * cam.fx * cam.fy);
    est.likelihood = numerator / denom;
    est.nll = -std::log(est.likelihood);
    est.stderr_rel = 0.0;
    return est;
  }

  std::vector<FrustumRegion> regions;
  regions.reserve(cams.size());
  for (const auto& pc : cams) {
    regions.push_back(
        FrustumRegion::pixel_window(pc.cam, pc.center_pixel, 5.0 * sigma_px));
  }
  const FrustumSamples samples =
      sample_frustum_intersection(regions, n, seed, x);
  if (samples.volume_estimate <= 0.0) {
    throw PosteriorDegenerate("frustum-intersection volume estimate is zero");
  }

  // Denominator = Vol(region) * E_Q[prod_j P(x_j | x') * 1{x' in bounds}],
  // algebraically one mean over all proposals of the box sampler.
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& p : samples.points) {
    if (!bounds.contains(p)) continue;
    double g = 1.0;
    for (const auto& pc : cams) {
      g *= observation_likelihood(pc, p, pc.center_pixel, sigma_px);
      if (g == 0.0) break;
    }
    sum += g;
    sum_sq += g * g;
  }
  const double n_d = static_cast<double>(samples.n_proposed);
  const double mean_all = sum / n_d;
  if (mean_all <= 0.0) {
    throw PosteriorDegenerate("importance integrand vanished on all samples");
  }
  const double denom = samples.proposal_volume * mean_all;
  const double var_all =
      std::max(0.0, (sum_sq - sum * sum / n_d) / std::max(1.0, n_d - 1.0));
  est.likelihood = numerator / denom;
  est.nll = -std::log(est.likelihood);
  est.stderr_rel = std::sqrt(var_all / n_d) / mean_all;
  return est;
}

PosteriorEstimate posterior_brute_force(const Vector3d& x,
                                        std::span<const PseudoCamera> cams,
                                        double sigma_px, int grid_res,
                                        const SceneBounds& bounds) {
  if (grid_res < 16) throw std::invalid_argument("posterior_brute_force: grid >= 16");
  const Vector3d ext = bounds.extent();
  const double cell_vol = bounds.volume() / (static_cast<double>(grid_res) *
                                             grid_res * grid_res);
  double denom = 0.0;
  for (int i = 0; i < grid_res; ++i) {
    for (int j = 0; j < grid_res; ++j) {
      for (int k = 0; k < grid_res; ++k) {
        const Vector3d p = bounds.min +
                           Vector3d(ext.x() * (i + 0.5) / grid_res,
                                    ext.y() * (j + 0.5) / grid_res,
                                    ext.z() * (k + 0.5) / grid_res);
        double g = 1.0;
        for (const auto& pc : cams) {
          g *= observation_likelihood(pc, p, pc.center_pixel, sigma_px);
          if (g == 0.0) break;
        }
        denom += g * cell_vol;
      }
    }
  }
  double numerator = 1.0;
  for (const auto& pc : cams) {
    numerator *= observation_likelihood(pc, x, pc.center_pixel, sigma_px);
  }
  PosteriorEstimate est;
  est.n_used = static_cast<long>(grid_res) * grid_res * grid_res;
  est.likelihood = denom > 0.0 ? numerator / denom : 0.0;
  est.nll = est.likelihood > 0.0 ? -std::log(est.likelihood)
                                 : std::numeric_limits<double>::infinity();
  return est;
}

// ---------------------------------------------------------------------------

namespace {

// NLL of one query point, or nullopt when it has no usable posterior.
std::optional<double> point_nll(const ProvenanceField& field,
                                const SceneBounds& bounds, const Vector3d& x,
                                const UncertaintyConfig& cfg, long n_importance,
                                uint64_t seed) {
  if (!bounds.contains(x)) return std::nullopt;
  const auto kept =
      sample_provenances(field, x, cfg.samples_per_point, seed, cfg.v_min);
  if (kept.empty()) return std::nullopt;
  try {
    const auto pseudo = build_pseudo_cameras(x, kept, cfg.intrinsics, bounds);
    const auto est = posterior_importance_sampling(x, pseudo, cfg.sigma_px,
                                                   n_importance, seed ^ 0xabcd,
                                                   bounds);
    return est.nll;
  } catch (const PosteriorDegenerate&) {
    return std::nullopt;
  }
}

// Sentinel = max finite value + 1 keeps min-max normalization well defined.
float sentinel_value(const std::vector<float>& values,
                     const std::vector<uint8_t>& sentinel) {
  float max_finite = 0.0f;
  bool any = false;
  for (size_t i = 0; i < values.size(); ++i) {
    if (!sentinel[i]) {
      max_finite = any ? std::max(max_finite, values[i]) : values[i];
      any = true;
    }
  }
  return any ? max_finite + 1.0f : 1.0f;
}

void min_max_normalize(const std::vector<float>& in, std::vector<float>& out) {
  float lo = 0.0f, hi = 1.0f;
  if (!in.empty()) {
    lo = *std::min_element(in.begin(), in.end());
    hi = *std::max_element(in.begin(), in.end());
  }
  const float span = hi - lo > 0.0f ? hi - lo : 1.0f;
  out.resize(in.size());
  for (size_t i = 0; i < in.size(); ++i) out[i] = (in[i] - lo) / span;
}

}  // namespace

UncertaintyMaps uncertainty_map(const ProvenanceField& field,
                                const DensityScene& scene,
                                const PinholeCamera& cam,
                                const UncertaintyConfig& cfg) {
  UncertaintyMaps maps;
  maps.cols = cam.width / cfg.map_stride;
  maps.rows = cam.height / cfg.map_stride;
  const size_t n = static_cast<size_t>(maps.cols) * maps.rows;
  maps.nll.assign(n, 0.0f);
  maps.depth.assign(n, 0.0f);
  maps.depth_error.assign(n, 0.0f);
  maps.sentinel.assign(n, 0);

  size_t idx = 0;
  for (int r = 0; r < maps.rows; ++r) {
    for (int col = 0; col < maps.cols; ++col, ++idx) {
      const Vector2d px((col + 0.5) * cfg.map_stride, (r + 0.5) * cfg.map_stride);
      const Ray ray = pixel_ray(cam, px);
      const double rendered = render_depth(scene, ray, cfg.depth_samples);
      maps.depth[idx] = static_cast<float>(rendered);
      const auto marched = surface_depth(scene, ray);
      if (rendered >= ray.far || !marched) {
        maps.sentinel[idx] = 1;
        continue;
      }
      maps.depth_error[idx] = static_cast<float>(std::abs(rendered - *marched));
      const Vector3d x = ray.at(rendered);
      const uint64_t seed = cfg.seed ^ (0x9e3779b97f4a7c15ull * (idx + 1));
      const auto nll =
          point_nll(field, scene.bounds(), x, cfg, cfg.n_map, seed);
      if (!nll) {
        maps.sentinel[idx] = 1;
        continue;
      }
      maps.nll[idx] = static_cast<float>(*nll);
    }
  }

  const float s_nll = sentinel_value(maps.nll, maps.sentinel);
  const float s_err = sentinel_value(maps.depth_error, maps.sentinel);
  for (size_t i = 0; i < n; ++i) {
    if (maps.sentinel[i]) {
      maps.nll[i] = s_nll;
      maps.depth_error[i] = s_err;
    }
  }
  min_max_normalize(maps.nll, maps.nll_norm);
  min_max_normalize(maps.depth_error, maps.depth_error_norm);
  return maps;
}

SurfaceNll nll_of_surface(const ProvenanceField& field, const DensityScene& scene,
                          std::span<const PinholeCamera> cams_test,
                          const UncertaintyConfig& cfg) {
  const auto points =
      sample_surface_points(scene, cams_test, cfg.points_per_view, cfg.seed);
  if (points.empty()) {
    throw std::runtime_error("nll_of_surface: no surface points found");
  }
  SurfaceNll out;
  std::vector<bool> is_sentinel;
  double max_finite = 0.0;
  bool any_finite = false;
  for (size_t i = 0; i < points.size(); ++i) {
    const uint64_t seed = cfg.seed ^ (0x517cc1b727220a95ull * (i + 1));
    const auto nll = point_nll(field, scene.bounds(), points[i].position, cfg,
                               cfg.n_importance, seed);
    if (nll) {
      out.per_point.push_back(*nll);
      is_sentinel.push_back(false);
      max_finite = any_finite ? std::max(max_finite, *nll) : *nll;
      any_finite = true;
    } else {
      out.per_point.push_back(0.0);
      is_sentinel.push_back(true);
      ++out.n_sentinel;
    }
  }
  const double sentinel = any_finite ? max_finite + 1.0 : 1.0;
  double sum = 0.0;
  for (size_t i = 0; i < out.per_point.size(); ++i) {
    if (is_sentinel[i]) out.per_point[i] = sentinel;
    sum += out.per_point[i];
  }
  out.n_points = static_cast<long>(out.per_point.size());
  out.mean_nll = sum / static_cast<double>(out.n_points);
  return out;
}

}  // namespace provfield
