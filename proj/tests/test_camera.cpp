#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "provfield/camera.hpp"

using namespace provfield;

namespace {

PinholeCamera test_cam() {
  return PinholeCamera(Eigen::Matrix3d::Identity(), Vector3d::Zero(), 100.0,
                       100.0, 50.0, 50.0, 100, 100, 0.5, 10.0);
}

}  // namespace

TEST_CASE("constructor rejects invalid rotations and clip planes") {
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(0, 0) = 2.0;
  CHECK_THROWS_AS(PinholeCamera(bad, Vector3d::Zero(), 1, 1, 0, 0, 1, 1, 0.1, 1),
                  std::invalid_argument);
  Eigen::Matrix3d mirror = Eigen::Matrix3d::Identity();
  mirror(2, 2) = -1.0;  // det -1
  CHECK_THROWS_AS(
      PinholeCamera(mirror, Vector3d::Zero(), 1, 1, 0, 0, 1, 1, 0.1, 1),
      std::invalid_argument);
  CHECK_THROWS_AS(PinholeCamera(Eigen::Matrix3d::Identity(), Vector3d::Zero(), 1,
                                1, 0, 0, 1, 1, 2.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("project_point: principal axis lands on the principal point") {
  const PinholeCamera cam = test_cam();
  const double mid = 0.5 * (cam.near + cam.far);
  const auto px = project_point(cam, Vector3d(0, 0, mid));
  REQUIRE(px.has_value());
  CHECK(px->x() == doctest::Approx(50.0));
  CHECK(px->y() == doctest::Approx(50.0));
}

TEST_CASE("project_point: behind camera and depth clips give outside-marker") {
  const PinholeCamera cam = test_cam();
  CHECK(!project_point(cam, Vector3d(0, 0, -1.0)).has_value());
  CHECK(!project_point(cam, Vector3d(0, 0, 0.1)).has_value());   // closer than near
  CHECK(!project_point(cam, Vector3d(0, 0, 11.0)).has_value());  // beyond far
}

TEST_CASE("project_point: hand pinhole formula") {
  const PinholeCamera cam = test_cam();
  const auto px = project_point(cam, Vector3d(0.1, 0.0, 1.0));
  REQUIRE(px.has_value());
  CHECK(px->x() == doctest::Approx(60.0));  // 100*0.1/1 + 50
  CHECK(px->y() == doctest::Approx(50.0));
}

TEST_CASE("project_point: camera center is an error") {
  const PinholeCamera cam = test_cam();
  CHECK_THROWS_AS(project_point(cam, cam.c), std::invalid_argument);
}

TEST_CASE("pixel_ray: principal point gives the principal axis") {
  const PinholeCamera cam = test_cam();
  const Ray r = pixel_ray(cam, Vector2d(50, 50));
  CHECK((r.dir - cam.principal_axis()).norm() < 1e-12);
  CHECK(r.origin == cam.c);
}

TEST_CASE("pixel_ray: adjacent pixels subtend ~atan(1/fx)") {
  const PinholeCamera cam = test_cam();
  const Ray a = pixel_ray(cam, Vector2d(50, 50));
  const Ray b = pixel_ray(cam, Vector2d(51, 50));
  const double angle = std::acos(std::clamp(a.dir.dot(b.dir), -1.0, 1.0));
  CHECK(angle == doctest::Approx(std::atan(1.0 / cam.fx)).epsilon(1e-3));
}

TEST_CASE("projection/ray round-trip identity on random in-frustum pixels") {
  Rng rng(17);
  // A tilted camera keeps the test honest about the R convention.
  const PinholeCamera cam = PinholeCamera::look_at(
      Vector3d(0.7, -0.4, -2.0), Vector3d(0.1, 0.2, 0.5), 80.0, 96, 72, 0.4, 8.0);
  for (int i = 0; i < 1000; ++i) {
    const Vector2d px(rng.uniform(0.0, cam.width), rng.uniform(0.0, cam.height));
    const Ray r = pixel_ray(cam, px);
    const double t = rng.uniform(cam.near + 0.05, cam.far - 0.05);
    // The ray parameter is Euclidean; stay within the depth window.
    const Vector3d x = r.at(t);
    const double depth = cam.world_to_camera(x).z();
    if (depth < cam.near || depth > cam.far) continue;
    const auto back = project_point(cam, x);
    REQUIRE(back.has_value());
    CHECK((*back - px).norm() < 1e-6);
  }
}

TEST_CASE("frustum_contains agrees with project_point on 10^4 random points") {
  Rng rng(29);
  const PinholeCamera cam = PinholeCamera::look_at(
      Vector3d(-0.3, 0.6, -1.5), Vector3d(0, 0, 1), 60.0, 64, 64, 0.5, 6.0);
  const FrustumRegion full = FrustumRegion::full(cam);
  int inside = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vector3d x(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 6));
    const bool a = frustum_contains(full, x);
    const bool b = project_point(cam, x).has_value();
    CHECK(a == b);
    inside += a;
  }
  CHECK(inside > 0);  // the sample actually exercises both branches
}

TEST_CASE("frustum_contains: depth windows and pixel windows") {
  const PinholeCamera cam = test_cam();
  const FrustumRegion full = FrustumRegion::full(cam);
  CHECK(!frustum_contains(full, Vector3d(0, 0, 0.2)));  // depth < near
  CHECK(frustum_contains(full, Vector3d(0, 0, 5.0)));

  // delta window: 5-sigma box around the projection of a center point.
  const double sigma = 1.0;
  const Vector3d center(0, 0, 4.0);
  const auto cpx = project_point(cam, center);
  REQUIRE(cpx.has_value());
  const FrustumRegion win = FrustumRegion::pixel_window(cam, *cpx, 5.0 * sigma);
  // A point projecting 6 sigma off-center in u must be outside.
  const double du = 6.0 * sigma;
  const Vector3d off(du / cam.fx * 4.0, 0, 4.0);
  const auto opx = project_point(cam, off);
  REQUIRE(opx.has_value());
  CHECK(std::abs((*opx - *cpx).x()) == doctest::Approx(6.0).epsilon(1e-9));
  CHECK(!frustum_contains(win, off));
  CHECK(frustum_contains(win, center));
}

TEST_CASE("single full frustum: volume estimate matches the closed form") {
  const PinholeCamera cam = test_cam();
  const FrustumRegion full = FrustumRegion::full(cam);
  const double analytic = frustum_volume(full);
  // Cross-check the closed form itself.
  const double expect = cam.width * cam.height / (cam.fx * cam.fy) *
                        (std::pow(cam.far, 3) - std::pow(cam.near, 3)) / 3.0;
  CHECK(analytic == doctest::Approx(expect));

  const std::vector<FrustumRegion> regions = {full};
  const auto s = sample_frustum_intersection(regions, 100000, 99);
  CHECK(s.volume_estimate == doctest::Approx(analytic).epsilon(0.02));
}

TEST_CASE("two identical frustums: intersection volume is idempotent") {
  const PinholeCamera cam = test_cam();
  const std::vector<FrustumRegion> one = {FrustumRegion::full(cam)};
  const std::vector<FrustumRegion> two = {FrustumRegion::full(cam),
                                          FrustumRegion::full(cam)};
  const auto a = sample_frustum_intersection(one, 50000, 7);
  const auto b = sample_frustum_intersection(two, 50000, 7);
  CHECK(a.volume_estimate == doctest::Approx(b.volume_estimate));
}

TEST_CASE("disjoint frustums: error without witness, witness point with one") {
  const PinholeCamera a = PinholeCamera::look_at(
      Vector3d(0, 0, 0), Vector3d(0, 0, 1), 100, 64, 64, 0.5, 2.0);
  const PinholeCamera b = PinholeCamera::look_at(
      Vector3d(100, 0, 0), Vector3d(100, 0, 1), 100, 64, 64, 0.5, 2.0);
  const std::vector<FrustumRegion> regions = {FrustumRegion::full(a),
                                              FrustumRegion::full(b)};
  CHECK_THROWS_AS(sample_frustum_intersection(regions, 2000, 3),
                  std::runtime_error);
  const Vector3d witness(0, 0, 1.0);
  const auto s = sample_frustum_intersection(regions, 2000, 3, witness);
  REQUIRE(s.points.size() == 1);
  CHECK(s.points[0] == witness);
  CHECK(s.volume_estimate == 0.0);
}

TEST_CASE("volume estimator: doubling n shrinks the standard error") {
  const PinholeCamera cam = test_cam();
  const std::vector<FrustumRegion> regions = {FrustumRegion::full(cam)};
  const auto stderr_of = [&](long n, uint64_t base) {
    double mean = 0.0, m2 = 0.0;
    const int trials = 20;
    for (int tr = 0; tr < trials; ++tr) {
      const double v =
          sample_frustum_intersection(regions, n, base + tr).volume_estimate;
      const double d = v - mean;
      mean += d / (tr + 1);
      m2 += d * (v - mean);
    }
    return std::sqrt(m2 / (trials - 1));
  };
  const double se1 = stderr_of(2000, 1000);
  const double se2 = stderr_of(4000, 5000);
  // Expected ratio sqrt(2) ~ 1.41; allow a factor-2 band around it.
  CHECK(se2 < se1 * 1.6);
  CHECK(se2 > se1 / 2.83);
}

TEST_CASE("pose_retract: identity increment returns the same pose") {
  const PinholeCamera cam = test_cam();
  const PinholeCamera out = pose_retract(cam, Vector3d::Zero(), Vector3d::Zero());
  CHECK((out.R - cam.R).norm() < 1e-15);
  CHECK((out.c - cam.c).norm() == 0.0);
}

TEST_CASE("pose_retract: 90-degree z-rotation permutes the columns") {
  const PinholeCamera cam = test_cam();
  const PinholeCamera out =
      pose_retract(cam, Vector3d(0, 0, M_PI / 2), Vector3d::Zero());
  // R I exp([e_z pi/2]) maps x->y, y->-x.
  CHECK((out.R.col(0) - Vector3d(0, 1, 0)).norm() < 1e-12);
  CHECK((out.R.col(1) - Vector3d(-1, 0, 0)).norm() < 1e-12);
  CHECK((out.R.col(2) - Vector3d(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("pose_retract: random increments stay orthonormal to 1e-12") {
  Rng rng(41);
  PinholeCamera cam = test_cam();
  for (int i = 0; i < 200; ++i) {
    const Vector3d omega = rng.normal_vec(3, 0.5);
    const Vector3d dc = rng.normal_vec(3, 0.1);
    if (omega.norm() >= M_PI) continue;
    cam = pose_retract(cam, omega, dc);
    CHECK((cam.R.transpose() * cam.R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(cam.R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("pose_retract rejects |omega| >= pi") {
  CHECK_THROWS_AS(pose_retract(test_cam(), Vector3d(4, 0, 0), Vector3d::Zero()),
                  std::invalid_argument);
}

TEST_CASE("camera JSON round-trip") {
  const std::string path = "/tmp/pf_cams_test.json";
  std::vector<PinholeCamera> cams;
  cams.push_back(PinholeCamera::look_at(Vector3d(1, 2, -3), Vector3d::Zero(),
                                        77.0, 64, 48, 0.25, 7.5));
  cams.push_back(test_cam());
  save_cameras(path, cams);
  const auto loaded = load_cameras(path);
  REQUIRE(loaded.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK((loaded[i].R - cams[i].R).norm() < 1e-12);
    CHECK((loaded[i].c - cams[i].c).norm() < 1e-12);
    CHECK(loaded[i].fx == cams[i].fx);
    CHECK(loaded[i].near == cams[i].near);
    CHECK(loaded[i].width == cams[i].width);
  }
  std::remove(path.c_str());
}
