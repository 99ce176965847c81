#include "provfield/provenance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace provfield {

ProvenanceSample make_sample(double range, const Vector3d& unit_dir, double v) {
  if (v <= 0.0) return {};
  return {v * range, v * unit_dir};
}

Vector3d recover_observation_location(const Vector3d& x,
                                      const ProvenanceSample& sample) {
  const double n = sample.d.norm();
  if (n <= 0.0) {
    throw std::invalid_argument(
        "recover_observation_location: invisible sample (||d|| = 0)");
  }
  return x - (sample.t / n) * (sample.d / n);
}

// ---------------------------------------------------------------------------

Eigen::VectorXd LatentFunction::eval(const Vector3d& x) const {
  const int b1 = static_cast<int>(mode == Mode::kSpatial ? z.rows() : eps.size());
  Eigen::VectorXd out(b1 + 3);
  if (mode == Mode::kSpatial) {
    out.head(b1) = z * x;
  } else {
    out.head(b1) = eps;
  }
  out.tail(3) = x;
  return out;
}

LatentFunction draw_latent(int b, double lambda, LatentFunction::Mode mode,
                           Rng& rng) {
  if (b < 1) throw std::invalid_argument("draw_latent: b >= 1");
  if (!(lambda > 0.0)) throw std::invalid_argument("draw_latent: lambda > 0");
  LatentFunction f;
  f.mode = mode;
  if (mode == LatentFunction::Mode::kSpatial) {
    f.z.resize(b + 1, 3);
    for (int i = 0; i < b + 1; ++i) {
      for (int j = 0; j < 3; ++j) f.z(i, j) = lambda * rng.normal();
    }
  } else {
    f.eps = rng.normal_vec(b + 1, lambda);
  }
  return f;
}

LatentFunction sample_latent_function(int b, double lambda, uint64_t seed) {
  Rng rng(seed);
  return draw_latent(b, lambda, LatentFunction::Mode::kSpatial, rng);
}

// ---------------------------------------------------------------------------

ProvenanceSample decode_head(const Eigen::Vector4d& raw, const FieldConfig& cfg) {
  if (!raw.allFinite()) {
    throw std::runtime_error("decode_head: non-finite head output");
  }
  const Vector3d d_raw = raw.tail<3>();
  const double n = std::sqrt(d_raw.squaredNorm() + 1e-12);
  if (d_raw.squaredNorm() < 1e-24) return {};
  const double v = sigmoid(n - cfg.vis_gate);
  const double t_metric = cfg.near + sigmoid(raw[0]) * (cfg.far - cfg.near);
  return {v * t_metric, v * (d_raw / n)};
}

Eigen::VectorXd field_input(const FieldConfig& cfg, const LatentFunction& latent,
                            const Vector3d& x) {
  if (cfg.deterministic) {
    return positional_encode(x, cfg.pe_levels);
  }
  return positional_encode(latent.eval(x), cfg.pe_levels);
}

ProvenanceSample evaluate_field(const ProvenanceField& field,
                                const LatentFunction& latent, const Vector3d& x) {
  const Eigen::VectorXd in = field_input(field.cfg, latent, x);
  const Eigen::VectorXd raw = mlp_forward_plain(field.head, in);
  return decode_head(Eigen::Vector4d(raw), field.cfg);
}

ProvenanceSample evaluate_deterministic(const ProvenanceField& field,
                                        const Vector3d& x) {
  if (!field.cfg.deterministic) {
    throw std::invalid_argument("evaluate_deterministic: field is stochastic");
  }
  const Eigen::VectorXd in = positional_encode(Eigen::Vector3d(x), field.cfg.pe_levels);
  const Eigen::VectorXd raw = mlp_forward_plain(field.head, in);
  return decode_head(Eigen::Vector4d(raw), field.cfg);
}

std::vector<ProvenanceSample> sample_provenances(const ProvenanceField& field,
                                                 const Vector3d& x, int n,
                                                 uint64_t seed, double v_min) {
  if (n < 1) throw std::invalid_argument("sample_provenances: n >= 1");
  std::vector<ProvenanceSample> kept;
  if (field.cfg.deterministic) {
    const ProvenanceSample s = evaluate_deterministic(field, x);
    if (s.visibility() >= v_min) kept.push_back(s);
    return kept;
  }
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const LatentFunction z = draw_latent(field.cfg.latent_dim,
                                         field.cfg.latent_scale,
                                         field.cfg.latent_mode, rng);
    const ProvenanceSample s = evaluate_field(field, z, x);
    if (s.visibility() >= v_min) kept.push_back(s);
  }
  return kept;
}

// ---------------------------------------------------------------------------

EmpiricalProvenance empirical_provenance(const DensityScene& scene,
                                         std::span<const PinholeCamera> cams,
                                         const Vector3d& x) {
  if (!scene.bounds().contains(x)) {
    throw std::invalid_argument("empirical_provenance: x outside scene bounds");
  }
  EmpiricalProvenance out;
  out.tuples.reserve(cams.size());
  for (const auto& cam : cams) {
    const bool visible_window = project_point(cam, x).has_value();
    if (!visible_window) {
      out.tuples.push_back({});
      continue;
    }
    const double range = (x - cam.c).norm();
    Ray ray;
    ray.origin = cam.c;
    ray.dir = (x - cam.c) / range;
    ray.near = cam.near;
    ray.far = cam.far;
    const double v = scene.transmittance(ray, range);
    out.tuples.push_back(make_sample(range, ray.dir, v));
  }
  return out;
}

// ---------------------------------------------------------------------------

NodeId decode_head_on_tape(Tape& t, NodeId head_raw, const FieldConfig& cfg) {
  const NodeId t_raw = t.slice(head_raw, 0, 1);
  const NodeId d_raw = t.slice(head_raw, 1, 3);
  const NodeId norm = t.sqrt(t.add_const(t.sum(t.square(d_raw)), 1e-12));
  const NodeId v = t.sigmoid(t.add_const(norm, -cfg.vis_gate));
  const NodeId t_norm =
      t.add_const(t.sigmoid(t_raw), cfg.near / cfg.t_scale());  // t / (far-near)
  const NodeId t_pred = t.mul(v, t_norm);
  const NodeId d_pred = t.mul(v, t.div(d_raw, norm));
  return t.concat(t_pred, d_pred);
}

NodeId fimle_loss(Tape& t, const MlpOnTape& head_nodes, const MlpParams& head,
                  const FieldConfig& cfg, std::span<const LatentFunction> pool,
                  std::span<const TrainPoint> batch) {
  if (pool.empty()) throw std::invalid_argument("fimle_loss: empty pool");
  if (batch.empty()) throw std::invalid_argument("fimle_loss: empty batch");

  NodeId total = t.constant_scalar(0.0);
  long n_terms = 0;
  std::vector<NodeId> preds(pool.size());
  std::vector<NodeId> dists(pool.size());
  for (const auto& point : batch) {
    bool any_nonzero = false;
    for (const auto& tup : point.tuples) {
      if (tup.visibility() > 0.0) {
        any_nonzero = true;
        break;
      }
    }
    if (!any_nonzero) continue;

    for (size_t j = 0; j < pool.size(); ++j) {
      const NodeId input = t.constant(field_input(cfg, pool[j], point.x));
      preds[j] = decode_head_on_tape(t, mlp_forward(t, head_nodes, head, input), cfg);
    }
    for (const auto& tup : point.tuples) {
      if (tup.visibility() <= 0.0) continue;
      const NodeId target = t.constant(tup.tuple(cfg.t_scale()));
      for (size_t j = 0; j < pool.size(); ++j) {
        dists[j] = t.sum(t.square(t.sub(preds[j], target)));
      }
      total = t.add(total, t.min_select(dists));
      ++n_terms;
    }
  }
  if (n_terms == 0) {
    throw std::runtime_error("fimle_loss: no nonzero empirical tuple in batch");
  }
  return t.scale(total, 1.0 / static_cast<double>(n_terms));
}

// ---------------------------------------------------------------------------

namespace {

// Stratified points along randomly chosen training rays, with their
// empirical tuples. Points falling outside the scene bound are skipped.
std::vector<TrainPoint> gather_batch(const DensityScene& scene,
                                     std::span<const PinholeCamera> cams,
                                     const TrainConfig& cfg, Rng& rng) {
  std::vector<TrainPoint> batch;
  if (cfg.sampling == TrainConfig::Sampling::kUniformBounds) {
    const int n = cfg.rays_per_iter * cfg.points_per_ray;
    batch.reserve(n);
    for (int i = 0; i < n; ++i) {
      const Vector3d x = scene.bounds().sample(rng);
      batch.push_back({x, empirical_provenance(scene, cams, x).tuples});
    }
    return batch;
  }
  const auto& cam = cams[rng.uniform_int(static_cast<int>(cams.size()))];
  batch.reserve(static_cast<size_t>(cfg.rays_per_iter) * cfg.points_per_ray);
  for (int r = 0; r < cfg.rays_per_iter; ++r) {
    const Vector2d px(rng.uniform(0.0, cam.width), rng.uniform(0.0, cam.height));
    const Ray ray = pixel_ray(cam, px);
    const double span = (ray.far - ray.near) / cfg.points_per_ray;
    for (int k = 0; k < cfg.points_per_ray; ++k) {
      const double tk = ray.near + (k + rng.uniform()) * span;
      const Vector3d x = ray.at(tk);
      if (!scene.bounds().contains(x)) continue;
      batch.push_back({x, empirical_provenance(scene, cams, x).tuples});
    }
  }
  return batch;
}

long count_nonzero(const std::vector<TrainPoint>& batch) {
  long n = 0;
  for (const auto& p : batch) {
    for (const auto& tup : p.tuples) {
      if (tup.visibility() > 0.0) ++n;
    }
  }
  return n;
}

}  // namespace

TrainResult train_provenance_field(const DensityScene& scene,
                                   std::span<const PinholeCamera> cams,
                                   const TrainConfig& config, uint64_t seed) {
  if (cams.empty()) throw std::invalid_argument("train: need >= 1 camera");
  if (config.iterations < 0) throw std::invalid_argument("train: iterations >= 0");

  Rng rng(seed);
  TrainResult res;
  res.field.cfg = config.field;
  res.field.cfg.deterministic = false;
  res.field.head =
      MlpParams::random_init(res.field.cfg.head_in_dim(), config.field.hidden, 4, rng);
  MlpAdam opt(res.field.head, config.adam);

  Tape tape;
  for (int it = 0; it < config.iterations; ++it) {
    if (it % config.field.resample_every == 0) {
      res.field.pool.clear();
      for (int j = 0; j < config.field.pool_size; ++j) {
        res.field.pool.push_back(draw_latent(config.field.latent_dim,
                                             config.field.latent_scale,
                                             config.field.latent_mode, rng));
      }
    }
    const auto batch = gather_batch(scene, cams, config, rng);
    if (count_nonzero(batch) == 0) {
      res.loss_trace.push_back(0.0);
      continue;
    }
    tape.clear();
    const MlpOnTape head_nodes = push_mlp(tape, res.field.head);
    const NodeId loss = fimle_loss(tape, head_nodes, res.field.head,
                                   res.field.cfg, res.field.pool, batch);
    const double loss_v = tape.scalar(loss);
    if (!std::isfinite(loss_v)) throw TrainingDiverged(it);
    tape.backward(loss);
    opt.step(res.field.head, collect_mlp_grads(tape, head_nodes));
    res.loss_trace.push_back(loss_v);
  }
  return res;
}

TrainResult train_deterministic_baseline(const DensityScene& scene,
                                         std::span<const PinholeCamera> cams,
                                         const TrainConfig& config, uint64_t seed) {
  if (cams.empty()) throw std::invalid_argument("train: need >= 1 camera");

  Rng rng(seed);
  TrainResult res;
  res.field.cfg = config.field;
  res.field.cfg.deterministic = true;
  res.field.head =
      MlpParams::random_init(res.field.cfg.head_in_dim(), config.field.hidden, 4, rng);
  MlpAdam opt(res.field.head, config.adam);

  Tape tape;
  std::vector<const ProvenanceSample*> nonzero;
  for (int it = 0; it < config.iterations; ++it) {
    const auto batch = gather_batch(scene, cams, config, rng);
    tape.clear();
    const MlpOnTape head_nodes = push_mlp(tape, res.field.head);
    NodeId total = tape.constant_scalar(0.0);
    long n_terms = 0;
    for (const auto& point : batch) {
      nonzero.clear();
      for (const auto& tup : point.tuples) {
        if (tup.visibility() > 0.0) nonzero.push_back(&tup);
      }
      if (nonzero.empty()) continue;
      const ProvenanceSample& target =
          *nonzero[rng.uniform_int(static_cast<int>(nonzero.size()))];
      const NodeId input = tape.constant(field_input(res.field.cfg, {}, point.x));
      const NodeId pred = decode_head_on_tape(
          tape, mlp_forward(tape, head_nodes, res.field.head, input), res.field.cfg);
      const NodeId tgt = tape.constant(target.tuple(res.field.cfg.t_scale()));
      total = tape.add(total, tape.sum(tape.square(tape.sub(pred, tgt))));
      ++n_terms;
    }
    if (n_terms == 0) {
      res.loss_trace.push_back(0.0);
      continue;
    }
    const NodeId loss = tape.scale(total, 1.0 / static_cast<double>(n_terms));
    const double loss_v = tape.scalar(loss);
    if (!std::isfinite(loss_v)) throw TrainingDiverged(it);
    tape.backward(loss);
    opt.step(res.field.head, collect_mlp_grads(tape, head_nodes));
    res.loss_trace.push_back(loss_v);
  }
  return res;
}

// ---------------------------------------------------------------------------

void save_field(const std::string& prefix, const ProvenanceField& field) {
  save_mlp_checkpoint(prefix + ".ckpt", field.head);
  const auto& c = field.cfg;
  nlohmann::json j = {
      {"b", c.latent_dim},
      {"lambda", c.latent_scale},
      {"L", c.pe_levels},
      {"K", c.pool_size},
      {"near", c.near},
      {"far", c.far},
      {"v_min", c.v_min},
      {"vis_gate", c.vis_gate},
      {"hidden", c.hidden},
      {"resample_every", c.resample_every},
      {"latent_mode",
       c.latent_mode == LatentFunction::Mode::kSpatial ? "spatial" : "invariant"},
      {"kind", c.deterministic ? "deterministic" : "stochastic"},
  };
  std::ofstream out(prefix + ".json");
  if (!out) throw std::runtime_error("save_field: cannot open " + prefix + ".json");
  out << j.dump(2) << "\n";
}

ProvenanceField load_field(const std::string& prefix) {
  std::ifstream in(prefix + ".json");
  if (!in) throw std::runtime_error("load_field: cannot open " + prefix + ".json");
  nlohmann::json j = nlohmann::json::parse(in);
  ProvenanceField f;
  f.cfg.latent_dim = j.at("b");
  f.cfg.latent_scale = j.at("lambda");
  f.cfg.pe_levels = j.at("L");
  f.cfg.pool_size = j.at("K");
  f.cfg.near = j.at("near");
  f.cfg.far = j.at("far");
  f.cfg.v_min = j.at("v_min");
  f.cfg.vis_gate = j.value("vis_gate", 2.0);
  f.cfg.hidden = j.value("hidden", 128);
  f.cfg.resample_every = j.value("resample_every", 1000);
  f.cfg.latent_mode = j.value("latent_mode", "spatial") == std::string("invariant")
                          ? LatentFunction::Mode::kInvariant
                          : LatentFunction::Mode::kSpatial;
  f.cfg.deterministic = j.value("kind", "stochastic") == std::string("deterministic");
  f.head = load_mlp_checkpoint(prefix + ".ckpt");
  if (f.head.in_dim() != f.cfg.head_in_dim()) {
    throw std::runtime_error("load_field: checkpoint/sidecar dimension mismatch");
  }
  return f;
}

}  // namespace provfield
