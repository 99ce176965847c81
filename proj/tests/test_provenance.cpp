#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "provfield/fixtures.hpp"
#include "provfield/provenance.hpp"
#include "oracles.hpp"

using namespace provfield;

namespace {

FieldConfig small_cfg() {
  FieldConfig c;
  c.latent_dim = 4;
  c.pe_levels = 1;
  c.hidden = 8;
  c.pool_size = 3;
  c.near = 1.0;
  c.far = 3.0;
  return c;
}

ProvenanceField random_field(const FieldConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  ProvenanceField f;
  f.cfg = cfg;
  f.head = MlpParams::random_init(cfg.head_in_dim(), cfg.hidden, 4, rng);
  return f;
}

}  // namespace

TEST_CASE("empirical provenance: visible point in an empty scene") {
  const SceneBounds b(Vector3d(-1, -1, -1), Vector3d(1, 1, 3));
  const AnalyticScene scene(b, {});
  const PinholeCamera cam = PinholeCamera::look_at(
      Vector3d::Zero(), Vector3d(0, 0, 2), 64.0, 64, 64, 0.5, 4.0);
  const auto emp = empirical_provenance(scene, std::vector{cam}, Vector3d(0, 0, 2));
  REQUIRE(emp.tuples.size() == 1);
  CHECK(emp.tuples[0].t == doctest::Approx(2.0));
  CHECK((emp.tuples[0].d - Vector3d(0, 0, 1)).norm() < 1e-12);
}

TEST_CASE("empirical provenance: opaque wall zeroes the tuple") {
  const SceneBounds b(Vector3d(-1, -1, -1), Vector3d(1, 1, 3));
  std::vector<Primitive> prims;
  prims.push_back(BoxPrimitive{Vector3d(-0.9, -0.9, 0.9), Vector3d(0.9, 0.9, 1.1),
                               5000.0});
  const AnalyticScene scene(b, std::move(prims));
  const PinholeCamera cam = PinholeCamera::look_at(
      Vector3d::Zero(), Vector3d(0, 0, 2), 64.0, 64, 64, 0.5, 4.0);
  const auto emp = empirical_provenance(scene, std::vector{cam}, Vector3d(0, 0, 2));
  CHECK(emp.tuples[0].visibility() < 1e-12);
  CHECK(emp.tuples[0].t < 1e-8);
}

TEST_CASE("empirical provenance: half-transparent slab follows the tuple law") {
  const SceneBounds b(Vector3d(-1, -1, -1), Vector3d(1, 1, 3));
  std::vector<Primitive> prims;
  // Thickness 0.5 of unit density: v = exp(-0.5).
  prims.push_back(BoxPrimitive{Vector3d(-0.9, -0.9, 0.75),
                               Vector3d(0.9, 0.9, 1.25), 1.0});
  const AnalyticScene scene(b, std::move(prims));
  const PinholeCamera cam = PinholeCamera::look_at(
      Vector3d::Zero(), Vector3d(0, 0, 2), 64.0, 64, 64, 0.5, 4.0);
  const Vector3d x(0, 0, 2);
  const auto emp = empirical_provenance(scene, std::vector{cam}, x);
  const double v = std::exp(-0.5);
  CHECK(emp.tuples[0].t == doctest::Approx(2.0 * v).epsilon(1e-12));
  CHECK((emp.tuples[0].d - Vector3d(0, 0, v)).norm() < 1e-12);

  // The observing location is recovered exactly despite v < 1.
  const Vector3d y = recover_observation_location(x, emp.tuples[0]);
  CHECK(y.norm() < 1e-12);
}

TEST_CASE("empirical provenance: x outside the bound is an error") {
  const AnalyticScene scene(SceneBounds(Vector3d(-1, -1, -1), Vector3d(1, 1, 1)), {});
  const PinholeCamera cam = PinholeCamera::look_at(
      Vector3d::Zero(), Vector3d(0, 0, 2), 64.0, 64, 64, 0.5, 4.0);
  CHECK_THROWS_AS(empirical_provenance(scene, std::vector{cam}, Vector3d(0, 0, 5)),
                  std::invalid_argument);
}

TEST_CASE("recover_observation_location: inverse and error cases") {
  CHECK((recover_observation_location(Vector3d(0, 0, 2), {2.0, Vector3d(0, 0, 1)}) -
         Vector3d::Zero())
            .norm() < 1e-12);
  CHECK_THROWS_AS(recover_observation_location(Vector3d(0, 0, 2), {}),
                  std::invalid_argument);
}

TEST_CASE("latent function: lambda -> 0 collapses to [0; x]") {
  const LatentFunction f = sample_latent_function(4, 1e-12, 7);
  const Vector3d x(0.3, -0.7, 1.1);
  const Eigen::VectorXd out = f.eval(x);
  REQUIRE(out.size() == 8);
  CHECK(out.head(5).norm() < 1e-10);
  CHECK((out.tail(3) - x).norm() == 0.0);
}

TEST_CASE("latent function: exact linearity and seed determinism") {
  const LatentFunction f = sample_latent_function(6, 1.0, 11);
  const LatentFunction g = sample_latent_function(6, 1.0, 11);
  CHECK((f.z - g.z).norm() == 0.0);
  const Vector3d x(0.2, 0.5, -0.3);
  CHECK((f.eval(2.5 * x) - 2.5 * f.eval(x)).norm() < 1e-12);
}

TEST_CASE("latent function: empirical entry variance tracks lambda^2") {
  const double lambda = 0.8;
  Rng rng(13);
  double sum_sq = 0.0;
  long n = 0;
  for (int i = 0; i < 700; ++i) {
    const LatentFunction f =
        draw_latent(6, lambda, LatentFunction::Mode::kSpatial, rng);
    sum_sq += f.z.squaredNorm();
    n += f.z.size();
  }
  const double var = sum_sq / n;  // mean of ~14.7k squared draws
  CHECK(var == doctest::Approx(lambda * lambda).epsilon(0.03));
}

TEST_CASE("decode: visibility-scaled construction follows the tuple law") {
  // v = 1 with unit direction and a 2.0 metric distance.
  const ProvenanceSample s = make_sample(2.0, Vector3d(0, 0, 1), 1.0);
  CHECK(s.t == 2.0);
  CHECK((s.d - Vector3d(0, 0, 1)).norm() == 0.0);
  // v = 0 collapses to the zero tuple.
  const ProvenanceSample z = make_sample(2.0, Vector3d(0, 0, 1), 0.0);
  CHECK(z.t == 0.0);
  CHECK(z.d.norm() == 0.0);
}

TEST_CASE("decode_head: samples satisfy the tuple invariants for any head") {
  const FieldConfig cfg = small_cfg();
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector4d raw = 10.0 * rng.normal_vec(4, 1.0);
    const ProvenanceSample s = decode_head(raw, cfg);
    CHECK(s.visibility() <= 1.0 + 1e-6);
    CHECK(s.t >= 0.0);
    // t stays within v * [near, far].
    CHECK(s.t <= s.visibility() * cfg.far + 1e-9);
  }
}

TEST_CASE("evaluate_field: fixed latent and point is deterministic") {
  const ProvenanceField f = random_field(small_cfg(), 3);
  const LatentFunction z = sample_latent_function(f.cfg.latent_dim, 1.0, 5);
  const Vector3d x(0.1, 0.2, 0.3);
  const ProvenanceSample a = evaluate_field(f, z, x);
  const ProvenanceSample b = evaluate_field(f, z, x);
  CHECK(a.t == b.t);
  CHECK((a.d - b.d).norm() == 0.0);
}

TEST_CASE("sample_provenances: v_min=0 keeps all draws; determinism per seed") {
  const ProvenanceField f = random_field(small_cfg(), 23);
  const Vector3d x(0.0, -0.1, 0.2);
  const auto all = sample_provenances(f, x, 32, 9, 0.0);
  CHECK(all.size() == 32);
  const auto a = sample_provenances(f, x, 8, 123, 0.0);
  const auto b = sample_provenances(f, x, 8, 123, 0.0);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].t == b[i].t);
    CHECK((a[i].d - b[i].d).norm() == 0.0);
  }
}

TEST_CASE("fimle_loss: exact pool matches give zero loss") {
  // Build a field, read its own predictions as targets: loss must be 0.
  const FieldConfig cfg = small_cfg();
  const ProvenanceField f = random_field(cfg, 31);
  std::vector<LatentFunction> pool;
  Rng rng(37);
  for (int j = 0; j < 2; ++j) {
    pool.push_back(draw_latent(cfg.latent_dim, 1.0, LatentFunction::Mode::kSpatial, rng));
  }
  std::vector<TrainPoint> batch;
  for (const Vector3d& x : {Vector3d(0.1, 0, 0.2), Vector3d(-0.2, 0.3, 0.1)}) {
    TrainPoint p{x, {}};
    for (const auto& z : pool) p.tuples.push_back(evaluate_field(f, z, x));
    batch.push_back(p);
  }
  Tape t;
  const MlpOnTape m = push_mlp(t, f.head);
  const NodeId loss = fimle_loss(t, m, f.head, cfg, pool, batch);
  CHECK(t.scalar(loss) < 1e-20);
}

TEST_CASE("fimle_loss: K=1 reduces to the plain squared distance") {
  const FieldConfig cfg = small_cfg();
  const ProvenanceField f = random_field(cfg, 41);
  const Vector3d x(0.05, -0.3, 0.4);
  const LatentFunction z = sample_latent_function(cfg.latent_dim, 1.0, 43);
  const ProvenanceSample pred = evaluate_field(f, z, x);
  const ProvenanceSample target{1.7, Vector3d(0.1, 0.2, 0.9).normalized() * 0.95};
  std::vector<TrainPoint> batch = {{x, {target}}};
  std::vector<LatentFunction> pool = {z};
  Tape t;
  const MlpOnTape m = push_mlp(t, f.head);
  const NodeId loss = fimle_loss(t, m, f.head, cfg, pool, batch);
  const double want =
      (pred.tuple(cfg.t_scale()) - target.tuple(cfg.t_scale())).squaredNorm();
  CHECK(t.scalar(loss) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("fimle_loss: invariant to pool permutation, monotone in pool growth") {
  const FieldConfig cfg = small_cfg();
  const ProvenanceField f = random_field(cfg, 47);
  Rng rng(53);
  std::vector<LatentFunction> pool;
  for (int j = 0; j < 4; ++j) {
    pool.push_back(draw_latent(cfg.latent_dim, 1.0, LatentFunction::Mode::kSpatial, rng));
  }
  std::vector<TrainPoint> batch;
  for (int i = 0; i < 5; ++i) {
    const Vector3d x(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                     rng.uniform(-0.5, 0.5));
    TrainPoint p{x, {}};
    p.tuples.push_back({rng.uniform(0.5, 2.5),
                        Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized() *
                            rng.uniform(0.3, 1.0)});
    batch.push_back(p);
  }
  const auto eval_loss = [&](std::span<const LatentFunction> p) {
    Tape t;
    const MlpOnTape m = push_mlp(t, f.head);
    return t.scalar(fimle_loss(t, m, f.head, cfg, p, batch));
  };
  const double base = eval_loss(pool);
  std::vector<LatentFunction> shuffled = {pool[2], pool[0], pool[3], pool[1]};
  CHECK(eval_loss(shuffled) == doctest::Approx(base).epsilon(1e-12));

  std::vector<LatentFunction> superset = pool;
  superset.push_back(draw_latent(cfg.latent_dim, 1.0, LatentFunction::Mode::kSpatial, rng));
  CHECK(eval_loss(superset) <= base + 1e-12);

  std::vector<LatentFunction> subset = {pool[0]};
  CHECK(eval_loss(subset) >= base - 1e-12);
}

TEST_CASE("fimle_loss gradient matches finite differences") {
  const FieldConfig cfg = small_cfg();
  ProvenanceField f = random_field(cfg, 59);
  Rng rng(61);
  std::vector<LatentFunction> pool;
  for (int j = 0; j < 3; ++j) {
    pool.push_back(draw_latent(cfg.latent_dim, 1.0, LatentFunction::Mode::kSpatial, rng));
  }
  std::vector<TrainPoint> batch;
  for (int i = 0; i < 4; ++i) {
    const Vector3d x(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                     rng.uniform(-0.5, 0.5));
    TrainPoint p{x, {}};
    p.tuples.push_back({rng.uniform(0.5, 2.5),
                        Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized() *
                            rng.uniform(0.3, 1.0)});
    batch.push_back(p);
  }
  Tape t;
  const MlpOnTape m = push_mlp(t, f.head);
  const NodeId loss = fimle_loss(t, m, f.head, cfg, pool, batch);
  t.backward(loss);
  const MlpGrads g = collect_mlp_grads(t, m);

  // Check a spread of parameters in each block against FD. The min-select
  // assignment is locally constant, so central differences are valid.
  const double h = 1e-5;
  const auto loss_at = [&]() {
    Tape t2;
    const MlpOnTape m2 = push_mlp(t2, f.head);
    return t2.scalar(fimle_loss(t2, m2, f.head, cfg, pool, batch));
  };
  const auto check_block = [&](Eigen::VectorXd& param, const Eigen::VectorXd& grad) {
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(param.size(), 8); ++i) {
      const double orig = param[i];
      param[i] = orig + h;
      const double fp = loss_at();
      param[i] = orig - h;
      const double fm = loss_at();
      param[i] = orig;
      const double want = (fp - fm) / (2 * h);
      const double err = std::abs(grad[i] - want);
      CHECK(err <= std::max(1e-7, 2e-3 * std::max(std::abs(want), std::abs(grad[i]))));
    }
  };
  check_block(f.head.l1.w, g.w1);
  check_block(f.head.l2.w, g.w2);
  check_block(f.head.l3.w, g.w3);
  check_block(f.head.l3.b, g.b3);
}

TEST_CASE("fimle_loss: all-zero batch is an error") {
  const FieldConfig cfg = small_cfg();
  const ProvenanceField f = random_field(cfg, 67);
  std::vector<LatentFunction> pool = {sample_latent_function(cfg.latent_dim, 1.0, 1)};
  std::vector<TrainPoint> batch = {{Vector3d(0, 0, 0), {ProvenanceSample{}}}};
  Tape t;
  const MlpOnTape m = push_mlp(t, f.head);
  CHECK_THROWS_AS(fimle_loss(t, m, f.head, cfg, pool, batch), std::runtime_error);
}

TEST_CASE("training: zero iterations returns the initialization") {
  const Fixture fx = make_fixture("single");
  TrainConfig cfg = fixture_train_config(fx);
  cfg.iterations = 0;
  const TrainResult r = train_provenance_field(fx.scene, fx.cams, cfg, 5);
  CHECK(r.loss_trace.empty());
  Rng rng(5);
  const MlpParams init =
      MlpParams::random_init(r.field.cfg.head_in_dim(), cfg.field.hidden, 4, rng);
  CHECK((r.field.head.l1.w - init.l1.w).norm() == 0.0);
}

TEST_CASE("training: same seed gives identical loss traces") {
  const Fixture fx = make_fixture("single");
  TrainConfig cfg = fixture_train_config(fx);
  cfg.iterations = 40;
  cfg.rays_per_iter = 4;
  cfg.points_per_ray = 4;
  const TrainResult a = train_provenance_field(fx.scene, fx.cams, cfg, 77);
  const TrainResult b = train_provenance_field(fx.scene, fx.cams, cfg, 77);
  REQUIRE(a.loss_trace.size() == b.loss_trace.size());
  for (size_t i = 0; i < a.loss_trace.size(); ++i) {
    CHECK(a.loss_trace[i] == b.loss_trace[i]);
  }
  const TrainResult c = train_provenance_field(fx.scene, fx.cams, cfg, 78);
  CHECK(a.loss_trace.back() != c.loss_trace.back());
}

TEST_CASE("training: short single-camera run clearly reduces the loss") {
  const Fixture fx = make_fixture("single");
  TrainConfig cfg = fixture_train_config(fx);
  cfg.iterations = 300;
  cfg.rays_per_iter = 8;
  cfg.points_per_ray = 8;
  const TrainResult r = train_provenance_field(fx.scene, fx.cams, cfg, 101);
  const double head =
      std::accumulate(r.loss_trace.begin(), r.loss_trace.begin() + 20, 0.0) / 20;
  const double tail =
      std::accumulate(r.loss_trace.end() - 20, r.loss_trace.end(), 0.0) / 20;
  CHECK(tail < 0.5 * head);
}

TEST_CASE("training: uniform-bounds point sampling runs without error") {
  const Fixture fx = make_fixture("single");
  TrainConfig cfg = fixture_train_config(fx);
  cfg.iterations = 40;
  cfg.rays_per_iter = 2;
  cfg.points_per_ray = 8;
  cfg.sampling = TrainConfig::Sampling::kUniformBounds;
  const TrainResult r = train_provenance_field(fx.scene, fx.cams, cfg, 19);
  CHECK(r.loss_trace.size() == 40);
  for (double v : r.loss_trace) CHECK(std::isfinite(v));
}

TEST_CASE("training: spatially invariant latent mode runs without error") {
  const Fixture fx = make_fixture("single");
  TrainConfig cfg = fixture_train_config(fx);
  cfg.iterations = 50;
  cfg.rays_per_iter = 4;
  cfg.points_per_ray = 4;
  cfg.field.latent_mode = LatentFunction::Mode::kInvariant;
  const TrainResult r = train_provenance_field(fx.scene, fx.cams, cfg, 7);
  CHECK(r.loss_trace.size() == 50);
  for (double v : r.loss_trace) CHECK(std::isfinite(v));
}

TEST_CASE("deterministic baseline: 0 iterations returns init; runs train") {
  const Fixture fx = make_fixture("single");
  TrainConfig cfg = fixture_train_config(fx);
  cfg.iterations = 60;
  cfg.rays_per_iter = 4;
  cfg.points_per_ray = 4;
  const TrainResult r = train_deterministic_baseline(fx.scene, fx.cams, cfg, 9);
  CHECK(r.field.cfg.deterministic);
  CHECK(r.loss_trace.size() == 60);
  // A deterministic field yields at most one sample.
  const auto s = sample_provenances(r.field, Vector3d(0, 0, 0), 16, 3, 0.0);
  CHECK(s.size() == 1);
}

TEST_CASE("field checkpoint round-trip preserves config and outputs") {
  const ProvenanceField f = random_field(small_cfg(), 83);
  const std::string prefix =
      (std::filesystem::temp_directory_path() / "pf_field_test").string();
  save_field(prefix, f);
  const ProvenanceField g = load_field(prefix);
  CHECK(g.cfg.latent_dim == f.cfg.latent_dim);
  CHECK(g.cfg.near == f.cfg.near);
  CHECK(g.cfg.v_min == f.cfg.v_min);
  const LatentFunction z = sample_latent_function(f.cfg.latent_dim, 1.0, 5);
  const Vector3d x(0.2, -0.1, 0.4);
  const ProvenanceSample a = evaluate_field(f, z, x);
  const ProvenanceSample b = evaluate_field(g, z, x);
  CHECK(a.t == doctest::Approx(b.t).epsilon(1e-5));  // float32 round-trip
  std::filesystem::remove(prefix + ".ckpt");
  std::filesystem::remove(prefix + ".json");
}
