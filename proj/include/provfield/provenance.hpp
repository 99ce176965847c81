#pragma once

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

#include "provfield/autodiff.hpp"
#include "provfield/camera.hpp"
#include "provfield/common.hpp"
#include "provfield/scene.hpp"

namespace provfield {

// Distance-direction tuple (t, d). The norm of d is the visibility v in
// [0, 1]; t is the v-scaled distance to the observing location, so a fully
// occluded observation degenerates to (0, 0).
struct ProvenanceSample {
  double t = 0.0;
  Vector3d d = Vector3d::Zero();

  double visibility() const { return d.norm(); }

  // 4-vector [t / t_scale, d] used for matching and metrics.
  Eigen::Vector4d tuple(double t_scale) const {
    return Eigen::Vector4d(t / t_scale, d.x(), d.y(), d.z());
  }
};

// (range, unit direction, visibility) -> (v*range, v*unit). v = 0 maps to
// the zero tuple regardless of range/direction.
ProvenanceSample make_sample(double range, const Vector3d& unit_dir, double v);

// Observing location y = x - (t/||d||) * d/||d||, the algebraic inverse of
// the v-scaling. Throws when ||d|| = 0 (an invisible sample has no location).
Vector3d recover_observation_location(const Vector3d& x,
                                      const ProvenanceSample& sample);

// ---------------------------------------------------------------------------
// Latent random function Z(x) = [z; I] x with z ~ N(0, lambda^2) of shape
// (b+1) x 3; output is the (b+4)-vector [z x; x]. The spatially invariant
// ablation replaces z x with a fixed Gaussian vector.
// ---------------------------------------------------------------------------
struct LatentFunction {
  enum class Mode { kSpatial, kInvariant };
  Mode mode = Mode::kSpatial;
  Eigen::MatrixXd z;    // (b+1) x 3, spatial mode
  Eigen::VectorXd eps;  // (b+1), invariant mode

  Eigen::VectorXd eval(const Vector3d& x) const;
  int latent_dim() const {
    return static_cast<int>(mode == Mode::kSpatial ? z.rows() - 1
                                                   : eps.size() - 1);
  }
};

LatentFunction draw_latent(int b, double lambda, LatentFunction::Mode mode,
                           Rng& rng);

// Deterministic per seed.
LatentFunction sample_latent_function(int b, double lambda, uint64_t seed);

// ---------------------------------------------------------------------------

struct FieldConfig {
  int latent_dim = 32;        // b
  double latent_scale = 1.0;  // lambda
  int pe_levels = 6;          // L, applied to the head input
  int hidden = 128;
  int pool_size = 16;  // K
  int resample_every = 1000;
  double near = 0.1;
  double far = 10.0;
  double vis_gate = 2.0;  // visibility decode offset: v = sigmoid(|d_raw| - gate)
  double v_min = 0.7;
  LatentFunction::Mode latent_mode = LatentFunction::Mode::kSpatial;
  bool deterministic = false;  // ablation: head consumes PE(x), one sample per x

  int head_in_dim() const {
    const int base = deterministic ? 3 : latent_dim + 4;
    return base * (1 + 2 * pe_levels);
  }
  double t_scale() const { return far - near; }
};

// The learned head plus its latent configuration. `pool` holds the K latent
// functions current during training; fresh latents are drawn for sampling.
struct ProvenanceField {
  FieldConfig cfg;
  MlpParams head;
  std::vector<LatentFunction> pool;
};

// Raw 4-dim head output -> decoded sample:
//   v = sigmoid(||d_raw|| - vis_gate)
//   t = v * (near + sigmoid(t_raw) * (far - near))
//   d = v * d_raw / ||d_raw||
ProvenanceSample decode_head(const Eigen::Vector4d& raw, const FieldConfig& cfg);

// Head input vector for a query point under one latent.
Eigen::VectorXd field_input(const FieldConfig& cfg, const LatentFunction& latent,
                            const Vector3d& x);

// D(x) = decode(H(PE(Z(x)))). Requires x inside the configured domain use;
// throws if the head output is non-finite.
ProvenanceSample evaluate_field(const ProvenanceField& field,
                                const LatentFunction& latent, const Vector3d& x);

// Deterministic-field evaluation (cfg.deterministic must be set).
ProvenanceSample evaluate_deterministic(const ProvenanceField& field,
                                        const Vector3d& x);

// n fresh latent draws, filtered to ||d|| >= v_min; may return fewer than n.
// For a deterministic field this returns at most one sample.
std::vector<ProvenanceSample> sample_provenances(const ProvenanceField& field,
                                                 const Vector3d& x, int n,
                                                 uint64_t seed,
                                                 double v_min = 0.7);

// ---------------------------------------------------------------------------
// Empirical provenance: one tuple per training camera, zero tuples kept for
// cameras that do not see x. v is the transmittance from the camera origin
// (its near plane) to x along the camera->x ray.
// ---------------------------------------------------------------------------
struct EmpiricalProvenance {
  std::vector<ProvenanceSample> tuples;  // exactly one per camera

  int n_visible(double v_threshold = 0.0) const {
    int n = 0;
    for (const auto& s : tuples) {
      if (s.visibility() > v_threshold) ++n;
    }
    return n;
  }
};

EmpiricalProvenance empirical_provenance(const DensityScene& scene,
                                         std::span<const PinholeCamera> cams,
                                         const Vector3d& x);

// ---------------------------------------------------------------------------
// Pointwise matching loss: for every nonzero empirical tuple, the squared
// 4-dim distance (t normalized by far - near) to the nearest of the K pool
// predictions; mean over terms. Gradients flow only through the selected
// pool member. Throws if the batch has no nonzero tuple.
// ---------------------------------------------------------------------------
struct TrainPoint {
  Vector3d x;
  std::vector<ProvenanceSample> tuples;
};

NodeId fimle_loss(Tape& tape, const MlpOnTape& head_nodes, const MlpParams& head,
                  const FieldConfig& cfg, std::span<const LatentFunction> pool,
                  std::span<const TrainPoint> batch);

// Decoded prediction tuple on the tape (4-dim, t normalized); shared by the
// fIMLE and deterministic-baseline losses.
NodeId decode_head_on_tape(Tape& tape, NodeId head_raw, const FieldConfig& cfg);

// ---------------------------------------------------------------------------

struct TrainConfig {
  FieldConfig field;
  int iterations = 2000;
  int rays_per_iter = 256;
  int points_per_ray = 32;
  AdamConfig adam{};  // lr default 5e-5
  enum class Sampling { kAlongRays, kUniformBounds };
  Sampling sampling = Sampling::kAlongRays;
};

struct TrainingDiverged : std::runtime_error {
  int iteration;
  explicit TrainingDiverged(int it)
      : std::runtime_error("training diverged (non-finite loss) at iteration " +
                           std::to_string(it)),
        iteration(it) {}
};

struct TrainResult {
  ProvenanceField field;
  std::vector<double> loss_trace;  // one entry per iteration
};

// fIMLE training loop: resample the latent pool every resample_every
// iterations, pick a random camera, shoot rays_per_iter rays, stratify
// points_per_ray points per ray, build empirical tuples, Adam-step the head.
TrainResult train_provenance_field(const DensityScene& scene,
                                   std::span<const PinholeCamera> cams,
                                   const TrainConfig& config, uint64_t seed);

// Same loop with a single deterministic prediction per point, regressed with
// MSE onto one randomly chosen nonzero empirical tuple.
TrainResult train_deterministic_baseline(const DensityScene& scene,
                                         std::span<const PinholeCamera> cams,
                                         const TrainConfig& config, uint64_t seed);

// Field checkpoint: MLP checkpoint at <prefix>.ckpt plus JSON sidecar at
// <prefix>.json carrying the field configuration.
void save_field(const std::string& prefix, const ProvenanceField& field);
ProvenanceField load_field(const std::string& prefix);

}  // namespace provfield
