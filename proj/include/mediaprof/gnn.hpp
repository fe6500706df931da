#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "common.hpp"
#include "embedding.hpp"
#include "graphstore.hpp"

namespace mediaprof::gnn {

using Matrix = RowMatrix;
using RowVector = Eigen::RowVectorXd;

enum class Variant { gcn, sage };
enum class Optimizer { adam, sgd };

inline std::string to_string(Variant v) { return v == Variant::gcn ? "gcn" : "sage"; }
inline Variant parse_variant(const std::string& s) {
  if (s == "gcn") return Variant::gcn;
  if (s == "sage") return Variant::sage;
  throw Error("unknown GNN variant '" + s + "'");
}

struct GnnConfig {
  Variant variant = Variant::gcn;
  int layers = 4;  // hidden graph layers; a logit layer follows
  int hidden_dim = 128;
  int epochs = 1000;
  double learning_rate = 0.01;
  double weight_decay = 0.0005;
  double dropout = 0.5;
  /// Neighbor sample size per hidden layer; the logit layer reuses the last entry.
  std::vector<int> sage_sample_sizes{10, 10, 10, 10};
  bool weighted = true;  // GCN adjacency uses overlap scores
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (layers < 1) throw Error("gnn: layers must be >= 1");
    if (hidden_dim < 1) throw Error("gnn: hidden_dim must be >= 1");
    if (epochs < 0) throw Error("gnn: epochs must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("gnn: dropout must be in [0, 1)");
    if (!(learning_rate >= 0.0)) throw Error("gnn: learning_rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw Error("gnn: weight_decay must be >= 0");
    if (variant == Variant::sage) {
      if (sage_sample_sizes.empty()) throw Error("gnn: sage_sample_sizes must not be empty");
      for (int s : sage_sample_sizes)
        if (s < 1) throw Error("gnn: sage sample sizes must be >= 1");
    }
  }

  int sample_size(int layer) const {
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(layer), sage_sample_sizes.size() - 1);
    return sage_sample_sizes[i];
  }
};

inline void to_json(nlohmann::json& j, const GnnConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"layers", c.layers},
       {"hidden_dim", c.hidden_dim},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"dropout", c.dropout},
       {"sage_sample_sizes", c.sage_sample_sizes},
       {"weighted", c.weighted},
       {"optimizer", c.optimizer == Optimizer::adam ? "adam" : "sgd"},
       {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Sparse propagation

/// Y = A X, accumulating each row in A's stored entry order.
inline Matrix propagate(const graph::SparseRows& a, const Matrix& x) {
  if (a.cols != x.rows()) throw Error("propagate: shape mismatch");
  Matrix y = Matrix::Zero(a.rows, x.cols());
  for (int i = 0; i < a.rows; ++i)
    for (std::size_t e = a.offsets[i]; e < a.offsets[i + 1]; ++e)
      y.row(i).noalias() += a.values[e] * x.row(a.columns[e]);
  return y;
}

/// Y = A^T X.
inline Matrix propagate_transposed(const graph::SparseRows& a, const Matrix& x) {
  if (a.rows != x.rows()) throw Error("propagate_transposed: shape mismatch");
  Matrix y = Matrix::Zero(a.cols, x.cols());
  for (int i = 0; i < a.rows; ++i)
    for (std::size_t e = a.offsets[i]; e < a.offsets[i + 1]; ++e)
      y.row(a.columns[e]).noalias() += a.values[e] * x.row(i);
  return y;
}

/// Row v holds 1/|S(v)| on each neighbor in S(v), a uniform sample of at most
/// `sample_size` neighbors drawn without replacement. Isolated rows are empty.
inline graph::SparseRows sample_mean_operator(const graph::Adjacency& adj, int sample_size,
                                              std::uint64_t seed) {
  if (sample_size < 1) throw Error("sample_mean_operator: sample_size must be >= 1");
  graph::SparseRows m;
  m.rows = m.cols = adj.size();
  std::vector<int> pool;
  for (int v = 0; v < adj.size(); ++v) {
    auto nb = adj.neighbors(v);
    pool.assign(nb.begin(), nb.end());
    const auto s = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(sample_size));
    if (s < pool.size()) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(v)));
      for (std::size_t i = 0; i < s; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
      }
      pool.resize(s);
      std::sort(pool.begin(), pool.end());
    }
    for (int u : pool) {
      m.columns.push_back(u);
      m.values.push_back(1.0 / static_cast<double>(s));
    }
    m.offsets.push_back(m.values.size());
  }
  return m;
}

enum class Activation { relu, identity };

inline Matrix activate(Matrix z, Activation act) {
  if (act == Activation::relu) z = z.cwiseMax(0.0);
  return z;
}

/// act(A_hat H W + b)
inline Matrix gcn_layer_forward(const graph::SparseRows& a_hat, const Matrix& h, const Matrix& w,
                                const RowVector& b, Activation act) {
  if (h.cols() != w.rows() || b.size() != w.cols() || a_hat.cols != h.rows())
    throw Error("gcn_layer_forward: shape mismatch");
  Matrix z = propagate(a_hat, h * w);
  z.rowwise() += b;
  return activate(std::move(z), act);
}

/// act(H W_self + mean_{u in S(v)} h_u W_neigh + b)
inline Matrix sage_layer_forward(const graph::Adjacency& adj, const Matrix& h, const Matrix& w_self,
                                 const Matrix& w_neigh, const RowVector& b, int sample_size,
                                 Activation act, std::uint64_t seed) {
  if (h.rows() != adj.size() || h.cols() != w_self.rows() || w_self.rows() != w_neigh.rows() ||
      w_self.cols() != w_neigh.cols() || b.size() != w_self.cols())
    throw Error("sage_layer_forward: shape mismatch");
  const auto m = sample_mean_operator(adj, sample_size, seed);
  Matrix z = h * w_self + propagate(m, h * w_neigh);
  z.rowwise() += b;
  return activate(std::move(z), act);
}

// ---------------------------------------------------------------------------
// Model

struct Layer {
  Matrix w_self;   // GCN: the only weight matrix
  Matrix w_neigh;  // GraphSAGE neighbor weights; empty for GCN
  RowVector bias;
};

struct GnnModel {
  Variant variant = Variant::gcn;
  std::vector<Layer> layers;  // hidden layers followed by the logit layer

  int num_classes() const { return static_cast<int>(layers.back().bias.size()); }
  int hidden_layers() const { return static_cast<int>(layers.size()) - 1; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w_self.size() + l.w_neigh.size() + l.bias.size();
    return n;
  }

  /// Visits every parameter block: f(name, Eigen block).
  template <class F>
  void for_each_parameter(F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = "layer" + std::to_string(i) + ".";
      f(p + "w_self", layers[i].w_self);
      if (variant == Variant::sage) f(p + "w_neigh", layers[i].w_neigh);
      Eigen::Map<Matrix> bias(layers[i].bias.data(), 1, layers[i].bias.size());
      f(p + "bias", bias);
    }
  }
};

inline Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

inline GnnModel init_model(const GnnConfig& c, int in_dim, int num_classes) {
  c.validate();
  if (in_dim < 1 || num_classes < 1) throw Error("init_model: bad dimensions");
  Rng rng(derive_seed(c.seed, "gnn-init"));
  GnnModel m;
  m.variant = c.variant;
  int fan_in = in_dim;
  for (int l = 0; l <= c.layers; ++l) {
    const int fan_out = l < c.layers ? c.hidden_dim : num_classes;
    Layer layer;
    layer.w_self = glorot_uniform(fan_in, fan_out, rng);
    if (c.variant == Variant::sage) layer.w_neigh = glorot_uniform(fan_in, fan_out, rng);
    layer.bias = RowVector::Zero(fan_out);
    m.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return m;
}

inline nlohmann::json tensor_json(const Matrix& m) {
  return {{"shape", {m.rows(), m.cols()}},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix tensor_from_json(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || static_cast<Eigen::Index>(data.size()) != shape[0] * shape[1])
    throw ParseError("tensor: shape does not match data");
  return Eigen::Map<const Matrix>(data.data(), shape[0], shape[1]);
}

/// Checkpoint: {"variant", "parameters": {name: {"shape": [r, c], "data": [row-major]}}}.
inline nlohmann::json model_to_json(const GnnModel& model) {
  nlohmann::json params = nlohmann::json::object();
  GnnModel copy = model;
  copy.for_each_parameter([&](const std::string& name, const auto& block) {
    params[name] = tensor_json(Matrix(block));
  });
  return {{"format", "mediaprof-gnn-checkpoint"},
          {"version", 1},
          {"variant", to_string(model.variant)},
          {"layers", model.layers.size()},
          {"parameters", params}};
}

inline GnnModel model_from_json(const nlohmann::json& j) {
  GnnModel m;
  m.variant = parse_variant(j.at("variant").get<std::string>());
  const auto n = j.at("layers").get<std::size_t>();
  const auto& p = j.at("parameters");
  for (std::size_t i = 0; i < n; ++i) {
    const auto pre = "layer" + std::to_string(i) + ".";
    Layer l;
    l.w_self = tensor_from_json(p.at(pre + "w_self"));
    if (m.variant == Variant::sage) l.w_neigh = tensor_from_json(p.at(pre + "w_neigh"));
    const Matrix b = tensor_from_json(p.at(pre + "bias"));
    l.bias = b.row(0);
    m.layers.push_back(std::move(l));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Graph side of the computation: normalized adjacency for GCN, adjacency
/// lists (for neighbor sampling) for GraphSAGE.
struct GraphOperators {
  Variant variant = Variant::gcn;
  graph::SparseRows a_hat;
  graph::Adjacency adjacency;

  static GraphOperators build(const graph::MediaGraph& g, const graph::NodeIndex& order,
                              const GnnConfig& c) {
    GraphOperators ops;
    ops.variant = c.variant;
    if (c.variant == Variant::gcn)
      ops.a_hat = graph::normalized_adjacency(g, order, c.weighted);
    else
      ops.adjacency = graph::Adjacency(g, order, false);
    return ops;
  }

  int nodes() const { return variant == Variant::gcn ? a_hat.rows : adjacency.size(); }
};

enum class Split { unlabeled, train, test };

struct LabelMask {
  std::vector<int> label;  // class index, -1 when unknown
  std::vector<Split> split;

  std::size_t size() const { return label.size(); }
  std::vector<int> train_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < label.size(); ++i)
      if (split[i] == Split::train && label[i] >= 0) out.push_back(static_cast<int>(i));
    return out;
  }
};

struct ForwardPass {
  std::vector<Matrix> inputs;        // per layer, after dropout
  std::vector<Matrix> dropout_mask;  // per layer; empty when not applied
  std::vector<Matrix> pre_activation;
  std::vector<graph::SparseRows> samplers;  // GraphSAGE only
  Matrix logits;
  Matrix embedding;  // activations of the last hidden layer
};

struct PassOptions {
  bool training = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;  // dropout masks and neighbor samples
  const GnnConfig* config = nullptr;
};

inline ForwardPass forward(const GnnModel& model, const GraphOperators& ops, const Matrix& x,
                           const PassOptions& opt) {
  if (x.rows() != ops.nodes()) throw Error("gnn forward: feature rows do not match graph");
  if (x.cols() != model.layers.front().w_self.rows())
    throw Error("gnn forward: feature dimension does not match model");
  ForwardPass fp;
  Rng drop_rng(derive_seed(opt.seed, "dropout"));
  Matrix h = x;
  const auto last = model.layers.size() - 1;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    if (opt.training && opt.dropout > 0.0) {
      const double keep = 1.0 - opt.dropout;
      Matrix mask(h.rows(), h.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i)
        mask.data()[i] = drop_rng.uniform() < keep ? 1.0 / keep : 0.0;
      h = h.cwiseProduct(mask);
      fp.dropout_mask.push_back(std::move(mask));
    } else {
      fp.dropout_mask.emplace_back();
    }
    Matrix z;
    if (model.variant == Variant::gcn) {
      z = propagate(ops.a_hat, h * layer.w_self);
    } else {
      const int s = opt.config ? opt.config->sample_size(static_cast<int>(l)) : 10;
      fp.samplers.push_back(
          sample_mean_operator(ops.adjacency, s, derive_seed(opt.seed, static_cast<std::uint64_t>(l))));
      z = h * layer.w_self + propagate(fp.samplers.back(), h * layer.w_neigh);
    }
    z.rowwise() += layer.bias;
    fp.inputs.push_back(std::move(h));
    if (l < last) {
      h = z.cwiseMax(0.0);
      if (l + 1 == last) fp.embedding = h;
    } else {
      fp.logits = z;
    }
    fp.pre_activation.push_back(std::move(z));
  }
  return fp;
}

/// Row-wise softmax.
inline Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline double l2_penalty(const GnnModel& m, double weight_decay) {
  double s = 0.0;
  for (const auto& l : m.layers) s += l.w_self.squaredNorm() + l.w_neigh.squaredNorm();
  return 0.5 * weight_decay * s;
}

/// Mean cross-entropy over train-tagged labeled nodes plus the L2 penalty.
inline double loss_from_logits(const Matrix& logits, const LabelMask& mask, const GnnModel& m,
                               double weight_decay) {
  const auto train = mask.train_nodes();
  double ce = 0.0;
  for (int v : train) {
    const auto row = logits.row(v);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    ce += lse - row(mask.label[static_cast<std::size_t>(v)]);
  }
  if (!train.empty()) ce /= static_cast<double>(train.size());
  return ce + l2_penalty(m, weight_decay);
}

/// Gradients shaped like the model's parameters.
inline GnnModel backward(const GnnModel& model, const GraphOperators& ops, const ForwardPass& fp,
                         const LabelMask& mask, double weight_decay) {
  GnnModel grad = model;
  const auto train = mask.train_nodes();
  Matrix dz = Matrix::Zero(fp.logits.rows(), fp.logits.cols());
  if (!train.empty()) {
    const Matrix p = softmax(fp.logits);
    const double scale = 1.0 / static_cast<double>(train.size());
    for (int v : train) {
      dz.row(v) = p.row(v) * scale;
      dz(v, mask.label[static_cast<std::size_t>(v)]) -= scale;
    }
  }
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Layer& layer = model.layers[l];
    Layer& g = grad.layers[l];
    const Matrix& hin = fp.inputs[l];
    Matrix dh;
    if (model.variant == Variant::gcn) {
      const Matrix dp = propagate_transposed(ops.a_hat, dz);
      g.w_self.noalias() = hin.transpose() * dp;
      if (l > 0) dh.noalias() = dp * layer.w_self.transpose();
    } else {
      const Matrix q = propagate_transposed(fp.samplers[l], dz);
      g.w_self.noalias() = hin.transpose() * dz;
      g.w_neigh.noalias() = hin.transpose() * q;
      if (l > 0) {
        dh.noalias() = dz * layer.w_self.transpose();
        dh.noalias() += q * layer.w_neigh.transpose();
      }
    }
    g.bias = dz.colwise().sum();
    g.w_self += weight_decay * layer.w_self;
    if (model.variant == Variant::sage) g.w_neigh += weight_decay * layer.w_neigh;
    if (l == 0) break;
    if (fp.dropout_mask[l].size() > 0) dh = dh.cwiseProduct(fp.dropout_mask[l]);
    const Matrix& zprev = fp.pre_activation[l - 1];
    dz = dh.cwiseProduct((zprev.array() > 0.0).cast<double>().matrix());
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  GnnModel model;
  EmbeddingMatrix embedding;
  std::vector<double> loss_history;  // per epoch, training-mode loss
  double initial_loss = 0.0;         // dropout-free loss of the initialized model
  double final_loss = 0.0;           // dropout-free loss of the trained model
};

inline std::uint64_t inference_seed(const GnnConfig& c) { return derive_seed(c.seed, "inference"); }

class AdamState {
 public:
  explicit AdamState(const GnnModel& shape) : m_(zeros(shape)), v_(zeros(shape)) {}

  void step(GnnModel& params, GnnModel& grads, const GnnConfig& c) {
    ++t_;
    const double b1 = c.adam_beta1, b2 = c.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    std::vector<Eigen::Map<Matrix>> p, g, m, v;
    collect(params, p);
    collect(grads, g);
    collect(m_, m);
    collect(v_, v);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i].cwiseProduct(g[i]);
      p[i].array() -= c.learning_rate * (m[i].array() / c1) /
                      ((v[i].array() / c2).sqrt() + c.adam_epsilon);
    }
  }

 private:
  static GnnModel zeros(GnnModel m) {
    m.for_each_parameter([](const std::string&, auto& block) { block.setZero(); });
    return m;
  }
  static void collect(GnnModel& model, std::vector<Eigen::Map<Matrix>>& out) {
    model.for_each_parameter([&](const std::string&, auto& block) {
      out.emplace_back(block.data(), block.rows(), block.cols());
    });
  }

  GnnModel m_, v_;
  int t_ = 0;
};

inline void sgd_step(GnnModel& params, GnnModel& grads, double lr) {
  std::vector<Eigen::Map<Matrix>> g;
  grads.for_each_parameter(
      [&](const std::string&, auto& block) { g.emplace_back(block.data(), block.rows(), block.cols()); });
  std::size_t i = 0;
  params.for_each_parameter([&](const std::string&, auto& block) { block -= lr * g[i++]; });
}

inline double eval_loss(const GnnModel& model, const GraphOperators& ops, const Matrix& x,
                        const LabelMask& mask, const GnnConfig& c) {
  PassOptions opt{false, 0.0, inference_seed(c), &c};
  return loss_from_logits(forward(model, ops, x, opt).logits, mask, model, c.weight_decay);
}

/// Full-batch training. GraphSAGE samples and dropout masks are redrawn every
/// epoch from (seed, epoch).
inline TrainResult train_semi_supervised(const GnnModel& initial, const GraphOperators& ops,
                                         const Matrix& x, const LabelMask& mask,
                                         const GnnConfig& c, const std::vector<std::string>& domains) {
  c.validate();
  if (mask.size() != static_cast<std::size_t>(x.rows())) throw Error("train: label mask size mismatch");
  TrainResult r{initial, {}, {}, 0.0, 0.0};
  r.initial_loss = eval_loss(r.model, ops, x, mask, c);
  AdamState adam(r.model);
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    PassOptions opt{true, c.dropout, derive_seed(c.seed, static_cast<std::uint64_t>(epoch)), &c};
    const auto fp = forward(r.model, ops, x, opt);
    const double loss = loss_from_logits(fp.logits, mask, r.model, c.weight_decay);
    if (!std::isfinite(loss))
      throw Error("gnn training diverged at epoch " + std::to_string(epoch) + " (loss " +
                  std::to_string(loss) + ", lr " + std::to_string(c.learning_rate) + ")");
    r.loss_history.push_back(loss);
    auto grads = backward(r.model, ops, fp, mask, c.weight_decay);
    if (c.optimizer == Optimizer::adam)
      adam.step(r.model, grads, c);
    else
      sgd_step(r.model, grads, c.learning_rate);
  }
  PassOptions opt{false, 0.0, inference_seed(c), &c};
  const auto fp = forward(r.model, ops, x, opt);
  r.final_loss = loss_from_logits(fp.logits, mask, r.model, c.weight_decay);
  r.embedding = {to_string(c.variant), domains, fp.embedding};
  return r;
}

inline TrainResult train_semi_supervised(const graph::MediaGraph& g, const graph::NodeIndex& order,
                                         const Matrix& x, const LabelMask& mask, int num_classes,
                                         const GnnConfig& c) {
  for (int k = 0; k < num_classes; ++k) {
    bool seen = false;
    for (int v : mask.train_nodes()) seen |= mask.label[static_cast<std::size_t>(v)] == k;
    if (!seen) log::warn("gnn: class " + std::to_string(k) + " has no training node");
  }
  const auto ops = GraphOperators::build(g, order, c);
  const auto model = init_model(c, static_cast<int>(x.cols()), num_classes);
  return train_semi_supervised(model, ops, x, mask, c, order.domains());
}

/// Dropout-free class predictions.
inline std::vector<int> predict(const GnnModel& model, const GraphOperators& ops, const Matrix& x,
                                const GnnConfig& c) {
  PassOptions opt{false, 0.0, inference_seed(c), &c};
  const auto fp = forward(model, ops, x, opt);
  std::vector<int> out(static_cast<std::size_t>(fp.logits.rows()));
  for (Eigen::Index i = 0; i < fp.logits.rows(); ++i) fp.logits.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
  return out;
}

/// Largest relative error between analytic gradients and central differences,
/// over every parameter. Dropout off; GraphSAGE samples fixed by the config seed.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline double grad_check(const GnnModel& model, const GraphOperators& ops, const Matrix& x,
                         const LabelMask& mask, const GnnConfig& c, double epsilon) {
  PassOptions opt{false, 0.0, inference_seed(c), &c};
  const auto fp = forward(model, ops, x, opt);
  auto grads = backward(model, ops, fp, mask, c.weight_decay);
  std::vector<Matrix> analytic;
  grads.for_each_parameter([&](const std::string&, auto& block) { analytic.emplace_back(block); });

  GnnModel probe = model;
  double worst = 0.0;
  std::size_t bi = 0;
  probe.for_each_parameter([&](const std::string&, auto& block) {
    for (Eigen::Index i = 0; i < block.size(); ++i) {
      double& w = block.data()[i];
      const double saved = w;
      w = saved + epsilon;
      const double up = loss_from_logits(forward(probe, ops, x, opt).logits, mask, probe, c.weight_decay);
      w = saved - epsilon;
      const double down = loss_from_logits(forward(probe, ops, x, opt).logits, mask, probe, c.weight_decay);
      w = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[bi].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    ++bi;
  });
  return worst;
}

}  // namespace mediaprof::gnn
