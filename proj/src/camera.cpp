#include "provfield/camera.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace provfield {

namespace {

void check_rotation(const Eigen::Matrix3d& R) {
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).norm();
  if (ortho > 1e-9) throw std::invalid_argument("camera: R not orthonormal");
  if (std::abs(R.determinant() - 1.0) > 1e-9) {
    throw std::invalid_argument("camera: det(R) != +1");
  }
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    out = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return out;
}

}  // namespace

PinholeCamera::PinholeCamera(const Eigen::Matrix3d& R_, const Vector3d& c_,
                             double fx_, double fy_, double cx_, double cy_,
                             int w, int h, double near_, double far_)
    : R(R_), c(c_), fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h),
      near(near_), far(far_) {
  check_rotation(R);
  if (!(near > 0.0 && near < far)) {
    throw std::invalid_argument("camera: need 0 < near < far");
  }
  if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("camera: fx, fy > 0");
  if (width < 1 || height < 1) throw std::invalid_argument("camera: bad size");
}

PinholeCamera PinholeCamera::look_at(const Vector3d& center, const Vector3d& target,
                                     double f, int w, int h, double near,
                                     double far) {
  Vector3d z = (target - center).normalized();
  Vector3d ref = std::abs(z.z()) < 0.99 ? Vector3d::UnitZ() : Vector3d::UnitX();
  Vector3d x = ref.cross(z).normalized();
  Vector3d y = z.cross(x);
  Eigen::Matrix3d R;
  R.col(0) = x;
  R.col(1) = y;
  R.col(2) = z;
  return PinholeCamera(R, center, f, f, 0.5 * w, 0.5 * h, w, h, near, far);
}

std::optional<Vector2d> project_point(const PinholeCamera& cam, const Vector3d& x) {
  if (!x.allFinite()) throw std::invalid_argument("project_point: non-finite point");
  const Vector3d pc = cam.world_to_camera(x);
  if (pc.norm() == 0.0) {
    throw std::invalid_argument("project_point: point at camera center");
  }
  const double depth = pc.z();
  if (depth < cam.near || depth > cam.far) return std::nullopt;
  const Vector2d px(cam.fx * pc.x() / depth + cam.cx,
                    cam.fy * pc.y() / depth + cam.cy);
  if (px.x() < 0.0 || px.x() > cam.width || px.y() < 0.0 || px.y() > cam.height) {
    return std::nullopt;
  }
  return px;
}

Ray pixel_ray(const PinholeCamera& cam, const Vector2d& pixel) {
  if (pixel.x() < 0.0 || pixel.x() > cam.width || pixel.y() < 0.0 ||
      pixel.y() > cam.height) {
    throw std::invalid_argument("pixel_ray: pixel outside image");
  }
  const Vector3d dir_cam((pixel.x() - cam.cx) / cam.fx,
                         (pixel.y() - cam.cy) / cam.fy, 1.0);
  Ray r;
  r.origin = cam.c;
  r.dir = (cam.R * dir_cam).normalized();
  r.near = cam.near;
  r.far = cam.far;
  return r;
}

FrustumRegion FrustumRegion::full(const PinholeCamera& cam) {
  FrustumRegion f;
  f.cam = cam;
  f.u_min = 0.0;
  f.u_max = cam.width;
  f.v_min = 0.0;
  f.v_max = cam.height;
  f.depth_min = cam.near;
  f.depth_max = cam.far;
  return f;
}

FrustumRegion FrustumRegion::pixel_window(const PinholeCamera& cam,
                                          const Vector2d& center, double delta) {
  if (delta < 0.0) throw std::invalid_argument("FrustumRegion: delta < 0");
  FrustumRegion f;
  f.cam = cam;
  f.u_min = std::max(0.0, center.x() - delta);
  f.u_max = std::min<double>(cam.width, center.x() + delta);
  f.v_min = std::max(0.0, center.y() - delta);
  f.v_max = std::min<double>(cam.height, center.y() + delta);
  f.depth_min = cam.near;
  f.depth_max = cam.far;
  return f;
}

bool frustum_contains(const FrustumRegion& region, const Vector3d& x) {
  const Vector3d pc = region.cam.world_to_camera(x);
  const double depth = pc.z();
  if (depth < region.depth_min || depth > region.depth_max) return false;
  const double u = region.cam.fx * pc.x() / depth + region.cam.cx;
  const double v = region.cam.fy * pc.y() / depth + region.cam.cy;
  return u >= region.u_min && u <= region.u_max && v >= region.v_min &&
         v <= region.v_max;
}

SceneBounds frustum_aabb(const FrustumRegion& region) {
  Vector3d lo = Vector3d::Constant(std::numeric_limits<double>::infinity());
  Vector3d hi = -lo;
  const double us[2] = {region.u_min, region.u_max};
  const double vs[2] = {region.v_min, region.v_max};
  const double zs[2] = {region.depth_min, region.depth_max};
  for (double u : us) {
    for (double v : vs) {
      for (double z : zs) {
        const Vector3d pc((u - region.cam.cx) / region.cam.fx * z,
                          (v - region.cam.cy) / region.cam.fy * z, z);
        const Vector3d pw = region.cam.R * pc + region.cam.c;
        lo = lo.cwiseMin(pw);
        hi = hi.cwiseMax(pw);
      }
    }
  }
  // Guard against degenerate (zero-thickness) boxes.
  for (int a = 0; a < 3; ++a) {
    if (hi[a] - lo[a] < 1e-12) {
      lo[a] -= 1e-12;
      hi[a] += 1e-12;
    }
  }
  return SceneBounds(lo, hi);
}

double frustum_volume(const FrustumRegion& region) {
  // Cross-section area at depth z is z^2 (du dv)/(fx fy); integrate in z.
  const double du = region.u_max - region.u_min;
  const double dv = region.v_max - region.v_min;
  const double z0 = region.depth_min, z1 = region.depth_max;
  return du * dv / (region.cam.fx * region.cam.fy) * (z1 * z1 * z1 - z0 * z0 * z0) /
         3.0;
}

namespace {

// Frustum regions are convex: two depth planes plus four pixel-window planes
// through the camera center. Keep x iff n.x + b >= 0 for all six.
struct HalfSpace {
  Vector3d n;
  double b;
};

void region_half_spaces(const FrustumRegion& r, std::vector<HalfSpace>& out) {
  const auto& cam = r.cam;
  const auto push_cam_plane = [&](const Vector3d& a, double offset) {
    const Vector3d n = cam.R * a;
    out.push_back({n, -n.dot(cam.c) + offset});
  };
  push_cam_plane(Vector3d(0, 0, 1), -r.depth_min);
  push_cam_plane(Vector3d(0, 0, -1), r.depth_max);
  push_cam_plane(Vector3d(cam.fx, 0, -(r.u_min - cam.cx)), 0.0);
  push_cam_plane(Vector3d(-cam.fx, 0, r.u_max - cam.cx), 0.0);
  push_cam_plane(Vector3d(0, cam.fy, -(r.v_min - cam.cy)), 0.0);
  push_cam_plane(Vector3d(0, -cam.fy, r.v_max - cam.cy), 0.0);
}

// Grid cells over the AABB intersection that cannot be ruled out by a single
// separating half-space. Thin intersections (narrow pixel windows) would
// make a plain AABB proposal hopelessly loose; this keeps the proposal a
// tight superset so the rejection rate and estimator variance stay low.
constexpr int kProposalGridRes = 20;

}  // namespace

FrustumSamples sample_frustum_intersection(std::span<const FrustumRegion> regions,
                                           long n, uint64_t seed,
                                           const std::optional<Vector3d>& witness) {
  if (regions.empty()) {
    throw std::invalid_argument("sample_frustum_intersection: no regions");
  }
  if (n < 1) throw std::invalid_argument("sample_frustum_intersection: n < 1");

  FrustumSamples out;
  out.n_proposed = n;

  // Component-wise intersection of the per-region AABBs.
  Vector3d lo = Vector3d::Constant(-std::numeric_limits<double>::infinity());
  Vector3d hi = -lo;
  for (const auto& r : regions) {
    const SceneBounds b = frustum_aabb(r);
    lo = lo.cwiseMax(b.min);
    hi = hi.cwiseMin(b.max);
  }
  std::vector<Vector3d> cells;  // kept cell minima
  Vector3d cell_ext = Vector3d::Zero();
  if ((hi - lo).minCoeff() > 0.0) {
    std::vector<HalfSpace> planes;
    for (const auto& r : regions) region_half_spaces(r, planes);
    cell_ext = (hi - lo) / kProposalGridRes;
    for (int i = 0; i < kProposalGridRes; ++i) {
      for (int j = 0; j < kProposalGridRes; ++j) {
        for (int k = 0; k < kProposalGridRes; ++k) {
          const Vector3d cmin = lo + Vector3d(i * cell_ext.x(), j * cell_ext.y(),
                                              k * cell_ext.z());
          bool separated = false;
          for (const auto& h : planes) {
            bool all_out = true;
            for (int corner = 0; corner < 8 && all_out; ++corner) {
              const Vector3d p = cmin + Vector3d((corner & 1) * cell_ext.x(),
                                                 ((corner >> 1) & 1) * cell_ext.y(),
                                                 ((corner >> 2) & 1) * cell_ext.z());
              all_out = h.n.dot(p) + h.b < 0.0;
            }
            if (all_out) {
              separated = true;
              break;
            }
          }
          if (!separated) cells.push_back(cmin);
        }
      }
    }
  }

  Rng rng(seed);
  if (!cells.empty()) {
    out.proposal_volume = cell_ext.prod() * static_cast<double>(cells.size());
    for (long i = 0; i < n; ++i) {
      const Vector3d& cmin = cells[rng.uniform_int(static_cast<int>(cells.size()))];
      const Vector3d p = cmin + Vector3d(rng.uniform() * cell_ext.x(),
                                         rng.uniform() * cell_ext.y(),
                                         rng.uniform() * cell_ext.z());
      bool inside = true;
      for (const auto& r : regions) {
        if (!frustum_contains(r, p)) {
          inside = false;
          break;
        }
      }
      if (inside) out.points.push_back(p);
    }
  }
  out.volume_estimate = out.proposal_volume *
                        static_cast<double>(out.points.size()) /
                        static_cast<double>(n);
  if (out.points.empty()) {
    if (!witness) {
      throw std::runtime_error(
          "sample_frustum_intersection: empty intersection (no acceptance, no "
          "witness)");
    }
    out.points.push_back(*witness);
  }
  return out;
}

Eigen::Matrix3d rodrigues(const Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-14) return Eigen::Matrix3d::Identity();
  const Vector3d axis = omega / theta;
  Eigen::Matrix3d k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(theta) * k +
         (1.0 - std::cos(theta)) * k * k;
}

PinholeCamera pose_retract(const PinholeCamera& cam, const Vector3d& omega,
                           const Vector3d& dc) {
  if (omega.norm() >= M_PI) {
    throw std::invalid_argument("pose_retract: |omega| must be < pi");
  }
  PinholeCamera out = cam;
  out.R = orthonormalize(cam.R * rodrigues(omega));
  out.c = cam.c + dc;
  return out;
}

std::vector<PinholeCamera> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cameras: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  std::vector<PinholeCamera> cams;
  for (const auto& e : j) {
    const auto r = e.at("R").get<std::vector<double>>();
    if (r.size() != 9) throw std::runtime_error("load_cameras: R needs 9 entries");
    Eigen::Matrix3d R;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) R(i, k) = r[3 * i + k];
    const auto cv = e.at("c").get<std::vector<double>>();
    if (cv.size() != 3) throw std::runtime_error("load_cameras: c needs 3 entries");
    cams.emplace_back(R, Vector3d(cv[0], cv[1], cv[2]), e.at("fx").get<double>(),
                      e.at("fy").get<double>(), e.at("cx").get<double>(),
                      e.at("cy").get<double>(), e.at("width").get<int>(),
                      e.at("height").get<int>(), e.at("near").get<double>(),
                      e.at("far").get<double>());
  }
  return cams;
}

void save_cameras(const std::string& path, std::span<const PinholeCamera> cams) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& cam : cams) {
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) r[3 * i + k] = cam.R(i, k);
    j.push_back({{"R", r},
                 {"c", {cam.c.x(), cam.c.y(), cam.c.z()}},
                 {"fx", cam.fx},
                 {"fy", cam.fy},
                 {"cx", cam.cx},
                 {"cy", cam.cy},
                 {"width", cam.width},
                 {"height", cam.height},
                 {"near", cam.near},
                 {"far", cam.far}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_cameras: cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace provfield
