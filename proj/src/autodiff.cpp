#include "provfield/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace provfield {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

NodeId Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(const Eigen::VectorXd& v, std::string name) {
  Node n;
  n.op = Op::kLeaf;
  n.rows = static_cast<int>(v.size());
  n.value = v;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Tape::leaf_matrix(const Eigen::VectorXd& w_flat, int rows, int cols,
                         std::string name) {
  require(w_flat.size() == static_cast<Eigen::Index>(rows) * cols,
          "leaf_matrix: flat size must equal rows*cols");
  Node n;
  n.op = Op::kLeaf;
  n.rows = rows;
  n.cols = cols;
  n.value = w_flat;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Tape::constant(const Eigen::VectorXd& v) {
  Node n;
  n.op = Op::kConst;
  n.rows = static_cast<int>(v.size());
  n.value = v;
  return push(std::move(n));
}

NodeId Tape::constant_scalar(double v) {
  return constant(Eigen::VectorXd::Constant(1, v));
}

NodeId Tape::add(NodeId a, NodeId b) {
  require(nodes_[a].value.size() == nodes_[b].value.size(), "add: size mismatch");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.rows = nodes_[a].rows;
  n.value = nodes_[a].value + nodes_[b].value;
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require(nodes_[a].value.size() == nodes_[b].value.size(), "sub: size mismatch");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.rows = nodes_[a].rows;
  n.value = nodes_[a].value - nodes_[b].value;
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  require(va.size() == vb.size() || va.size() == 1 || vb.size() == 1,
          "mul: size mismatch");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  if (va.size() == vb.size()) {
    n.value = va.cwiseProduct(vb);
  } else if (va.size() == 1) {
    n.value = va[0] * vb;
  } else {
    n.value = vb[0] * va;
  }
  n.rows = static_cast<int>(n.value.size());
  return push(std::move(n));
}

NodeId Tape::div(NodeId a, NodeId b) {
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  require(va.size() == vb.size() || vb.size() == 1, "div: size mismatch");
  Node n;
  n.op = Op::kDiv;
  n.a = a;
  n.b = b;
  if (va.size() == vb.size()) {
    n.value = va.cwiseQuotient(vb);
  } else {
    n.value = va / vb[0];
  }
  n.rows = static_cast<int>(n.value.size());
  return push(std::move(n));
}

NodeId Tape::matvec(NodeId w, NodeId x) {
  const Node& nw = nodes_[w];
  const Node& nx = nodes_[x];
  require(nw.cols == nx.rows && nx.cols == 1, "matvec: shape mismatch");
  Node n;
  n.op = Op::kMatVec;
  n.a = w;
  n.b = x;
  n.rows = nw.rows;
  row_major_matvec(nw.value, nw.rows, nw.cols, nx.value, n.value);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.value = nodes_[a].value.cwiseMax(0.0);
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.value = nodes_[a].value.unaryExpr([](double x) { return provfield::sigmoid(x); });
  return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
  Node n;
  n.op = Op::kExp;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.value = nodes_[a].value.array().exp().matrix();
  return push(std::move(n));
}

NodeId Tape::sqrt(NodeId a) {
  Node n;
  n.op = Op::kSqrt;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.value = nodes_[a].value.array().sqrt().matrix();
  return push(std::move(n));
}

NodeId Tape::square(NodeId a) {
  Node n;
  n.op = Op::kSquare;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.value = nodes_[a].value.array().square().matrix();
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  Node n;
  n.op = Op::kSum;
  n.a = a;
  n.rows = 1;
  double acc = 0.0;
  const auto& v = nodes_[a].value;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += v[i];
  n.value = Eigen::VectorXd::Constant(1, acc);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double c) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.c0 = c;
  n.value = c * nodes_[a].value;
  return push(std::move(n));
}

NodeId Tape::add_const(NodeId a, double c) {
  Node n;
  n.op = Op::kAddConst;
  n.a = a;
  n.rows = nodes_[a].rows;
  n.c0 = c;
  n.value = nodes_[a].value.array() + c;
  return push(std::move(n));
}

NodeId Tape::slice(NodeId a, int offset, int len) {
  require(offset >= 0 && len >= 1 &&
              offset + len <= static_cast<int>(nodes_[a].value.size()),
          "slice: out of range");
  Node n;
  n.op = Op::kSlice;
  n.a = a;
  n.rows = len;
  n.c0 = offset;
  n.value = nodes_[a].value.segment(offset, len);
  return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
  Node n;
  n.op = Op::kConcat;
  n.a = a;
  n.b = b;
  const auto& va = nodes_[a].value;
  const auto& vb = nodes_[b].value;
  n.rows = static_cast<int>(va.size() + vb.size());
  n.value.resize(n.rows);
  n.value << va, vb;
  return push(std::move(n));
}

NodeId Tape::min_select(std::span<const NodeId> inputs) {
  require(!inputs.empty(), "min_select: empty input list");
  Node n;
  n.op = Op::kMinSelect;
  n.rows = 1;
  n.select_inputs.assign(inputs.begin(), inputs.end());
  int best = 0;
  double best_v = nodes_[inputs[0]].value[0];
  for (size_t i = 0; i < inputs.size(); ++i) {
    require(nodes_[inputs[i]].value.size() == 1, "min_select: inputs must be scalar");
    const double v = nodes_[inputs[i]].value[0];
    if (v < best_v) {
      best_v = v;
      best = static_cast<int>(i);
    }
  }
  n.selected = best;
  n.value = Eigen::VectorXd::Constant(1, best_v);
  return push(std::move(n));
}

void Tape::backward(NodeId root) {
  require(root >= 0 && root < static_cast<NodeId>(nodes_.size()), "backward: bad root");
  require(nodes_[root].value.size() == 1, "backward: root must be scalar");

  for (auto& n : nodes_) n.adjoint = Eigen::VectorXd::Zero(n.value.size());
  nodes_[root].adjoint[0] = 1.0;

  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd:
        nodes_[n.a].adjoint += n.adjoint;
        nodes_[n.b].adjoint += n.adjoint;
        break;
      case Op::kSub:
        nodes_[n.a].adjoint += n.adjoint;
        nodes_[n.b].adjoint -= n.adjoint;
        break;
      case Op::kMul: {
        const auto& va = nodes_[n.a].value;
        const auto& vb = nodes_[n.b].value;
        if (va.size() == vb.size()) {
          nodes_[n.a].adjoint += n.adjoint.cwiseProduct(vb);
          nodes_[n.b].adjoint += n.adjoint.cwiseProduct(va);
        } else if (va.size() == 1) {
          nodes_[n.a].adjoint[0] += n.adjoint.dot(vb);
          nodes_[n.b].adjoint += va[0] * n.adjoint;
        } else {
          nodes_[n.b].adjoint[0] += n.adjoint.dot(va);
          nodes_[n.a].adjoint += vb[0] * n.adjoint;
        }
        break;
      }
      case Op::kDiv: {
        const auto& va = nodes_[n.a].value;
        const auto& vb = nodes_[n.b].value;
        if (va.size() == vb.size()) {
          nodes_[n.a].adjoint += n.adjoint.cwiseQuotient(vb);
          nodes_[n.b].adjoint -=
              n.adjoint.cwiseProduct(n.value).cwiseQuotient(vb);
        } else {
          nodes_[n.a].adjoint += n.adjoint / vb[0];
          nodes_[n.b].adjoint[0] -= n.adjoint.dot(n.value) / vb[0];
        }
        break;
      }
      case Op::kMatVec: {
        const Node& nw = nodes_[n.a];
        const Node& nx = nodes_[n.b];
        auto& adj_w = nodes_[n.a].adjoint;
        auto& adj_x = nodes_[n.b].adjoint;
        const int rows = nw.rows, cols = nw.cols;
        for (int i = 0; i < rows; ++i) {
          const double gi = n.adjoint[i];
          if (gi == 0.0) continue;
          const double* wr = nw.value.data() + static_cast<ptrdiff_t>(i) * cols;
          double* gw = adj_w.data() + static_cast<ptrdiff_t>(i) * cols;
          for (int j = 0; j < cols; ++j) {
            gw[j] += gi * nx.value[j];
            adj_x[j] += gi * wr[j];
          }
        }
        break;
      }
      case Op::kRelu: {
        const auto& va = nodes_[n.a].value;
        for (Eigen::Index i = 0; i < va.size(); ++i) {
          if (va[i] > 0.0) nodes_[n.a].adjoint[i] += n.adjoint[i];
        }
        break;
      }
      case Op::kSigmoid:
        nodes_[n.a].adjoint +=
            n.adjoint.cwiseProduct(n.value.cwiseProduct(
                (Eigen::VectorXd::Ones(n.value.size()) - n.value)));
        break;
      case Op::kExp:
        nodes_[n.a].adjoint += n.adjoint.cwiseProduct(n.value);
        break;
      case Op::kSqrt:
        nodes_[n.a].adjoint +=
            n.adjoint.cwiseQuotient(2.0 * n.value.cwiseMax(1e-300));
        break;
      case Op::kSquare:
        nodes_[n.a].adjoint +=
            2.0 * n.adjoint.cwiseProduct(nodes_[n.a].value);
        break;
      case Op::kSum:
        nodes_[n.a].adjoint.array() += n.adjoint[0];
        break;
      case Op::kScale:
        nodes_[n.a].adjoint += n.c0 * n.adjoint;
        break;
      case Op::kAddConst:
        nodes_[n.a].adjoint += n.adjoint;
        break;
      case Op::kSlice:
        nodes_[n.a].adjoint.segment(static_cast<int>(n.c0), n.rows) += n.adjoint;
        break;
      case Op::kConcat: {
        const Eigen::Index na = nodes_[n.a].value.size();
        nodes_[n.a].adjoint += n.adjoint.head(na);
        nodes_[n.b].adjoint += n.adjoint.tail(n.adjoint.size() - na);
        break;
      }
      case Op::kMinSelect:
        nodes_[n.select_inputs[n.selected]].adjoint[0] += n.adjoint[0];
        break;
    }
  }
}

// ---------------------------------------------------------------------------

Eigen::VectorXd positional_encode(const Eigen::VectorXd& x, int levels) {
  if (levels < 0) throw std::invalid_argument("positional_encode: levels < 0");
  if (!x.allFinite()) {
    throw std::invalid_argument("positional_encode: non-finite input");
  }
  const Eigen::Index n = x.size();
  Eigen::VectorXd out(n * (1 + 2 * levels));
  out.head(n) = x;
  double freq = M_PI;
  for (int l = 0; l < levels; ++l) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out[n + 2 * l * n + i] = std::sin(freq * x[i]);
      out[n + (2 * l + 1) * n + i] = std::cos(freq * x[i]);
    }
    freq *= 2.0;
  }
  return out;
}

// ---------------------------------------------------------------------------

bool MlpParams::all_finite() const {
  return l1.w.allFinite() && l1.b.allFinite() && l2.w.allFinite() &&
         l2.b.allFinite() && l3.w.allFinite() && l3.b.allFinite();
}

MlpParams MlpParams::create(int in_dim, int hidden, int out_dim) {
  MlpParams p;
  p.l1 = {hidden, in_dim, Eigen::VectorXd::Zero(hidden * in_dim),
          Eigen::VectorXd::Zero(hidden)};
  p.l2 = {hidden, hidden, Eigen::VectorXd::Zero(hidden * hidden),
          Eigen::VectorXd::Zero(hidden)};
  p.l3 = {out_dim, hidden, Eigen::VectorXd::Zero(out_dim * hidden),
          Eigen::VectorXd::Zero(out_dim)};
  return p;
}

MlpParams MlpParams::random_init(int in_dim, int hidden, int out_dim, Rng& rng) {
  MlpParams p = create(in_dim, hidden, out_dim);
  // Small random biases keep ReLU pre-activations off exact zero.
  auto fill = [&rng](LinearLayer& l) {
    const double s = std::sqrt(2.0 / l.in_dim);
    for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w[i] = s * rng.normal();
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = 0.01 * rng.normal();
  };
  fill(p.l1);
  fill(p.l2);
  fill(p.l3);
  return p;
}

MlpOnTape push_mlp(Tape& t, const MlpParams& p) {
  MlpOnTape m;
  m.w1 = t.leaf_matrix(p.l1.w, p.l1.out_dim, p.l1.in_dim, "w1");
  m.b1 = t.leaf(p.l1.b, "b1");
  m.w2 = t.leaf_matrix(p.l2.w, p.l2.out_dim, p.l2.in_dim, "w2");
  m.b2 = t.leaf(p.l2.b, "b2");
  m.w3 = t.leaf_matrix(p.l3.w, p.l3.out_dim, p.l3.in_dim, "w3");
  m.b3 = t.leaf(p.l3.b, "b3");
  return m;
}

NodeId mlp_forward(Tape& t, const MlpOnTape& m, const MlpParams& p, NodeId input) {
  if (t.value(input).size() != p.in_dim()) {
    throw std::invalid_argument("mlp_forward: input dim mismatch");
  }
  NodeId h1 = t.relu(t.add(t.matvec(m.w1, input), m.b1));
  NodeId h2 = t.relu(t.add(t.matvec(m.w2, h1), m.b2));
  return t.add(t.matvec(m.w3, h2), m.b3);
}

Eigen::VectorXd mlp_forward_plain(const MlpParams& p, const Eigen::VectorXd& in) {
  if (in.size() != p.in_dim()) {
    throw std::invalid_argument("mlp_forward_plain: input dim mismatch");
  }
  Eigen::VectorXd h, tmp;
  row_major_matvec(p.l1.w, p.l1.out_dim, p.l1.in_dim, in, tmp);
  h = (tmp + p.l1.b).cwiseMax(0.0);
  row_major_matvec(p.l2.w, p.l2.out_dim, p.l2.in_dim, h, tmp);
  h = (tmp + p.l2.b).cwiseMax(0.0);
  row_major_matvec(p.l3.w, p.l3.out_dim, p.l3.in_dim, h, tmp);
  return tmp + p.l3.b;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& p) {
  MlpGrads g;
  g.w1 = Eigen::VectorXd::Zero(p.l1.w.size());
  g.b1 = Eigen::VectorXd::Zero(p.l1.b.size());
  g.w2 = Eigen::VectorXd::Zero(p.l2.w.size());
  g.b2 = Eigen::VectorXd::Zero(p.l2.b.size());
  g.w3 = Eigen::VectorXd::Zero(p.l3.w.size());
  g.b3 = Eigen::VectorXd::Zero(p.l3.b.size());
  return g;
}

MlpGrads collect_mlp_grads(const Tape& t, const MlpOnTape& m) {
  MlpGrads g;
  g.w1 = t.adjoint(m.w1);
  g.b1 = t.adjoint(m.b1);
  g.w2 = t.adjoint(m.w2);
  g.b2 = t.adjoint(m.b2);
  g.w3 = t.adjoint(m.w3);
  g.b3 = t.adjoint(m.b3);
  return g;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Eigen::Index> sizes, AdamConfig cfg) : cfg_(cfg) {
  if (cfg.lr <= 0.0) throw std::invalid_argument("Adam: lr must be > 0");
  for (Eigen::Index s : sizes) {
    m_.push_back(Eigen::VectorXd::Zero(s));
    v_.push_back(Eigen::VectorXd::Zero(s));
  }
}

void Adam::step(std::span<Eigen::VectorXd* const> params,
                std::span<const Eigen::VectorXd* const> grads,
                std::span<const std::string_view> names) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("Adam::step: block count mismatch");
  }
  for (size_t k = 0; k < grads.size(); ++k) {
    if (!grads[k]->allFinite()) {
      throw std::runtime_error("Adam::step: non-finite gradient in block '" +
                               std::string(names[k]) + "'");
    }
    if (grads[k]->size() != m_[k].size()) {
      throw std::invalid_argument("Adam::step: shape mismatch in block '" +
                                  std::string(names[k]) + "'");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& m = m_[k];
    auto& v = v_[k];
    const auto& g = *grads[k];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Eigen::VectorXd m_hat = m / bc1;
    Eigen::VectorXd v_hat = v / bc2;
    params[k]->array() -=
        cfg_.lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
  }
}

MlpAdam::MlpAdam(const MlpParams& p, AdamConfig cfg)
    : adam_({p.l1.w.size(), p.l1.b.size(), p.l2.w.size(), p.l2.b.size(),
             p.l3.w.size(), p.l3.b.size()},
            cfg) {}

void MlpAdam::step(MlpParams& p, const MlpGrads& g) {
  std::array<Eigen::VectorXd*, 6> params = {&p.l1.w, &p.l1.b, &p.l2.w,
                                            &p.l2.b, &p.l3.w, &p.l3.b};
  std::array<const Eigen::VectorXd*, 6> grads = {&g.w1, &g.b1, &g.w2,
                                                 &g.b2, &g.w3, &g.b3};
  std::array<std::string_view, 6> names = {"w1", "b1", "w2", "b2", "w3", "b3"};
  adam_.step(params, grads, names);
}

// ---------------------------------------------------------------------------

namespace {

void write_f32_block(std::ofstream& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const float f = static_cast<float>(v[i]);
    out.write(reinterpret_cast<const char*>(&f), sizeof(float));
  }
}

Eigen::VectorXd read_f32_block(std::ifstream& in, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    float f;
    in.read(reinterpret_cast<char*>(&f), sizeof(float));
    v[i] = static_cast<double>(f);
  }
  if (!in) throw std::runtime_error("checkpoint: truncated float data");
  return v;
}

}  // namespace

void save_mlp_checkpoint(const std::string& path, const MlpParams& p) {
  nlohmann::json header = {
      {"format", "provfield-mlp"},
      {"version", 1},
      {"dtype", "f32le"},
      {"layers",
       {{{"out", p.l1.out_dim}, {"in", p.l1.in_dim}},
        {{"out", p.l2.out_dim}, {"in", p.l2.in_dim}},
        {{"out", p.l3.out_dim}, {"in", p.l3.in_dim}}}},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  out << header.dump() << "\n";
  write_f32_block(out, p.l1.w);
  write_f32_block(out, p.l1.b);
  write_f32_block(out, p.l2.w);
  write_f32_block(out, p.l2.b);
  write_f32_block(out, p.l3.w);
  write_f32_block(out, p.l3.b);
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

MlpParams load_mlp_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: missing header");
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("version", 0) != 1) {
    throw std::runtime_error("checkpoint: unsupported version");
  }
  const auto& layers = header.at("layers");
  if (layers.size() != 3) throw std::runtime_error("checkpoint: expected 3 layers");
  const int in_dim = layers[0].at("in");
  const int hidden = layers[0].at("out");
  const int out_dim = layers[2].at("out");
  if (static_cast<int>(layers[1].at("in")) != hidden ||
      static_cast<int>(layers[1].at("out")) != hidden ||
      static_cast<int>(layers[2].at("in")) != hidden) {
    throw std::runtime_error("checkpoint: inconsistent layer shapes");
  }
  MlpParams p = MlpParams::create(in_dim, hidden, out_dim);
  p.l1.w = read_f32_block(in, p.l1.w.size());
  p.l1.b = read_f32_block(in, p.l1.b.size());
  p.l2.w = read_f32_block(in, p.l2.w.size());
  p.l2.b = read_f32_block(in, p.l2.b.size());
  p.l3.w = read_f32_block(in, p.l3.w.size());
  p.l3.b = read_f32_block(in, p.l3.b.size());
  return p;
}

}  // namespace provfield
