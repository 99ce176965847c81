#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "provfield/common.hpp"

namespace provfield {

// ---------------------------------------------------------------------------
// Reverse-mode tape over dense real vectors.
//
// Every node value is a flat vector; matrix leaves are stored row-major with
// their (rows, cols) shape so matvec can address them. backward(root) fills
// adjoints for every node reachable from a scalar root. Summations run in
// recorded order, so replaying a tape is bit-identical to an untaped forward
// that uses the same primitive helpers.
// ---------------------------------------------------------------------------

using NodeId = int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,   // elementwise; broadcasts if one side is scalar
  kDiv,   // elementwise; broadcasts if divisor is scalar
  kMatVec,
  kRelu,
  kSigmoid,
  kExp,
  kSqrt,
  kSquare,
  kSum,
  kScale,     // value * c0
  kAddConst,  // value + c0
  kSlice,
  kConcat,
  kMinSelect,
};

// y = W x for a row-major flattened W. Shared by taped and untaped forwards
// so the two paths produce bit-identical sums.
inline void row_major_matvec(const Eigen::VectorXd& w_flat, int rows, int cols,
                             const Eigen::VectorXd& x, Eigen::VectorXd& y) {
  y.resize(rows);
  for (int i = 0; i < rows; ++i) {
    double acc = 0.0;
    const double* wr = w_flat.data() + static_cast<ptrdiff_t>(i) * cols;
    for (int j = 0; j < cols; ++j) acc += wr[j] * x[j];
    y[i] = acc;
  }
}

class Tape {
 public:
  struct Node {
    Op op;
    NodeId a = kNoNode;
    NodeId b = kNoNode;
    int rows = 0;
    int cols = 1;
    double c0 = 0.0;  // scale factor / additive constant / slice offset
    Eigen::VectorXd value;
    Eigen::VectorXd adjoint;
    std::vector<NodeId> select_inputs;  // kMinSelect only
    int selected = -1;
    std::string name;  // leaves only
  };

  NodeId leaf(const Eigen::VectorXd& v, std::string name = {});
  NodeId leaf_matrix(const Eigen::VectorXd& w_flat, int rows, int cols,
                     std::string name = {});
  NodeId constant(const Eigen::VectorXd& v);
  NodeId constant_scalar(double v);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId matvec(NodeId w, NodeId x);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId exp(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId square(NodeId a);
  NodeId sum(NodeId a);
  NodeId scale(NodeId a, double c);
  NodeId add_const(NodeId a, double c);
  NodeId slice(NodeId a, int offset, int len);
  NodeId concat(NodeId a, NodeId b);
  // All inputs scalar; value = min, gradient flows only to the argmin.
  NodeId min_select(std::span<const NodeId> inputs);

  const Eigen::VectorXd& value(NodeId id) const { return nodes_[id].value; }
  double scalar(NodeId id) const { return nodes_[id].value[0]; }
  const Eigen::VectorXd& adjoint(NodeId id) const { return nodes_[id].adjoint; }
  int selected_input(NodeId min_select_id) const {
    return nodes_[min_select_id].selected;
  }

  // Populates adjoints of every node feeding into `root` (scalar-valued).
  // Untouched leaves get zero adjoints.
  void backward(NodeId root);

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(size_t n) { nodes_.reserve(n); }

 private:
  NodeId push(Node&& n);
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Positional encoding: [x, sin(2^0 pi x), cos(2^0 pi x), ...,
//                          sin(2^{L-1} pi x), cos(2^{L-1} pi x)].
// Output dimension n * (1 + 2L). Throws on non-finite input or L < 0.
// ---------------------------------------------------------------------------
Eigen::VectorXd positional_encode(const Eigen::VectorXd& x, int levels);

// ---------------------------------------------------------------------------
// 3-layer MLP. Hidden activations are ReLU; the head is returned raw
// (output squashing happens at the decode site).
// ---------------------------------------------------------------------------

struct LinearLayer {
  int out_dim = 0;
  int in_dim = 0;
  Eigen::VectorXd w;  // row-major out_dim x in_dim
  Eigen::VectorXd b;
};

struct MlpParams {
  LinearLayer l1, l2, l3;

  int in_dim() const { return l1.in_dim; }
  int hidden_dim() const { return l1.out_dim; }
  int out_dim() const { return l3.out_dim; }
  bool all_finite() const;

  static MlpParams create(int in_dim, int hidden, int out_dim);
  // He-style init scaled by 1/sqrt(fan_in); biases zero.
  static MlpParams random_init(int in_dim, int hidden, int out_dim, Rng& rng);
};

// Leaf ids of one MLP's parameters on a tape.
struct MlpOnTape {
  NodeId w1, b1, w2, b2, w3, b3;
};

MlpOnTape push_mlp(Tape& tape, const MlpParams& p);

// Records the 3-layer forward pass; returns the raw head node.
// Throws on input/parameter shape mismatch.
NodeId mlp_forward(Tape& tape, const MlpOnTape& mlp, const MlpParams& p,
                   NodeId input);

// Recording-free forward, bit-identical to the taped version.
Eigen::VectorXd mlp_forward_plain(const MlpParams& p, const Eigen::VectorXd& in);

struct MlpGrads {
  Eigen::VectorXd w1, b1, w2, b2, w3, b3;
  static MlpGrads zeros_like(const MlpParams& p);
};

// Reads parameter adjoints off a tape after backward().
MlpGrads collect_mlp_grads(const Tape& tape, const MlpOnTape& mlp);

// ---------------------------------------------------------------------------
// Adam with bias correction over a fixed list of flat parameter blocks.
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Eigen::Index> sizes, AdamConfig cfg);

  // Throws std::runtime_error naming the offending block on NaN gradients.
  void step(std::span<Eigen::VectorXd* const> params,
            std::span<const Eigen::VectorXd* const> grads,
            std::span<const std::string_view> names);

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

// Convenience wrapper stepping all six MLP blocks at once.
class MlpAdam {
 public:
  MlpAdam() = default;
  MlpAdam(const MlpParams& p, AdamConfig cfg);
  void step(MlpParams& p, const MlpGrads& g);
  long step_count() const { return adam_.step_count(); }

 private:
  Adam adam_;
};

// ---------------------------------------------------------------------------
// Checkpoint: one JSON header line (shapes + format version), then raw
// little-endian float32 blocks in layer order w1,b1,w2,b2,w3,b3.
// ---------------------------------------------------------------------------
void save_mlp_checkpoint(const std::string& path, const MlpParams& p);
MlpParams load_mlp_checkpoint(const std::string& path);

}  // namespace provfield
