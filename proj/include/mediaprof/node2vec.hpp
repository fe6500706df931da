#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "embedding.hpp"
#include "graphstore.hpp"

namespace mediaprof::node2vec {

struct Node2VecConfig {
  int num_walks = 10;
  int walk_length = 100;
  int dim = 512;
  double p = 0.5;  // return parameter
  double q = 2.0;  // in-out parameter
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  /// Learning rate decays linearly to learning_rate * min_learning_rate_ratio.
  double min_learning_rate_ratio = 1e-4;
  bool weighted = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(p > 0.0) || !(q > 0.0)) throw Error("node2vec: p and q must be positive");
    if (dim < 1) throw Error("node2vec: dim must be >= 1");
    if (walk_length < 2) throw Error("node2vec: walk_length must be >= 2");
    if (num_walks < 1) throw Error("node2vec: num_walks must be >= 1");
    if (window < 1) throw Error("node2vec: window must be >= 1");
    if (negatives < 0) throw Error("node2vec: negatives must be >= 0");
    if (epochs < 0) throw Error("node2vec: epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw Error("node2vec: learning_rate must be positive");
  }
};

inline void to_json(nlohmann::json& j, const Node2VecConfig& c) {
  j = {{"num_walks", c.num_walks},       {"walk_length", c.walk_length},
       {"dim", c.dim},                   {"p", c.p},
       {"q", c.q},                       {"window", c.window},
       {"negatives", c.negatives},       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate}, {"min_learning_rate_ratio", c.min_learning_rate_ratio},
       {"weighted", c.weighted},         {"seed", c.seed}};
}

/// Walker's alias method: O(k) build, O(1) draw.
class AliasTable {
 public:
  AliasTable() = default;

  explicit AliasTable(std::span<const double> weights) {
    const auto k = weights.size();
    prob_.assign(k, 0.0);
    alias_.assign(k, 0);
    if (k == 0) return;
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw Error("AliasTable: weights must have a positive sum");
    std::vector<double> scaled(k);
    std::vector<std::uint32_t> small, large;
    for (std::size_t i = 0; i < k; ++i) {
      scaled[i] = weights[i] * static_cast<double>(k) / total;
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
    }
    while (!small.empty() && !large.empty()) {
      const auto s = small.back();
      small.pop_back();
      const auto l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (auto i : large) prob_[i] = 1.0;
    for (auto i : small) prob_[i] = 1.0;
  }

  std::size_t size() const { return prob_.size(); }
  bool empty() const { return prob_.empty(); }

  std::size_t draw(Rng& rng) const {
    const auto i = static_cast<std::size_t>(rng.below(prob_.size()));
    return rng.uniform() < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

/// Unnormalized second-order weights over neighbors(cur), in adjacency order:
/// w(cur,x) / p if x == prev, w(cur,x) if x is adjacent to prev, w(cur,x) / q
/// otherwise. Without prev (first step) the weights are the edge weights.
inline std::vector<double> transition_bias(const graph::Adjacency& adj, std::optional<int> prev,
                                           int cur, double p, double q) {
  auto nb = adj.neighbors(cur);
  auto wt = adj.weights(cur);
  std::vector<double> w(nb.size());
  for (std::size_t i = 0; i < nb.size(); ++i) {
    double alpha = 1.0;
    if (prev) {
      if (nb[i] == *prev)
        alpha = 1.0 / p;
      else if (!adj.connected(*prev, nb[i]))
        alpha = 1.0 / q;
    }
    w[i] = wt[i] * alpha;
  }
  return w;
}

/// Normalized next-step distribution over neighbors(cur). Empty when cur has no neighbors.
inline std::vector<double> transition_weights(const graph::Adjacency& adj, std::optional<int> prev,
                                              int cur, double p, double q) {
  if (prev && !adj.connected(*prev, cur))
    throw Error("transition_weights: prev is not adjacent to cur");
  auto w = transition_bias(adj, prev, cur, p, q);
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return w;
}

/// Second-order walker with lazily built, cached alias tables per (prev, cur).
class Walker {
 public:
  Walker(const graph::Adjacency& adj, double p, double q) : adj_(adj), p_(p), q_(q) {}

  /// Next node after (prev, cur); -1 at a dead end.
  int step(std::optional<int> prev, int cur, Rng& rng) {
    if (adj_.degree(cur) == 0) return -1;
    const AliasTable& t = table(prev, cur);
    return adj_.neighbors(cur)[t.draw(rng)];
  }

  std::vector<int> walk(int start, int length, Rng& rng) {
    std::vector<int> w{start};
    w.reserve(static_cast<std::size_t>(length));
    std::optional<int> prev;
    int cur = start;
    while (static_cast<int>(w.size()) < length) {
      const int next = step(prev, cur, rng);
      if (next < 0) break;
      w.push_back(next);
      prev = cur;
      cur = next;
    }
    return w;
  }

  std::size_t cached_tables() const { return cache_.size(); }

 private:
  const AliasTable& table(std::optional<int> prev, int cur) {
    const auto n = static_cast<std::uint64_t>(adj_.size());
    const std::uint64_t key = prev ? static_cast<std::uint64_t>(*prev) * n + static_cast<std::uint64_t>(cur)
                                   : n * n + static_cast<std::uint64_t>(cur);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto w = transition_bias(adj_, prev, cur, p_, q_);
    return cache_.emplace(key, AliasTable(w)).first->second;
  }

  const graph::Adjacency& adj_;
  double p_, q_;
  std::unordered_map<std::uint64_t, AliasTable> cache_;
};

struct WalkCorpus {
  std::vector<std::vector<int>> walks;

  std::size_t tokens() const {
    std::size_t t = 0;
    for (const auto& w : walks) t += w.size();
    return t;
  }
};

/// num_walks rounds; in each round one walk starts from every node, in index
/// order. Walk r from node v uses its own stream derived from (seed, r, v).
inline WalkCorpus sample_walks(const graph::Adjacency& adj, const Node2VecConfig& config) {
  config.validate();
  if (adj.size() == 0) throw Error("sample_walks: empty graph");
  Walker walker(adj, config.p, config.q);
  WalkCorpus corpus;
  corpus.walks.reserve(static_cast<std::size_t>(config.num_walks) * static_cast<std::size_t>(adj.size()));
  for (int r = 0; r < config.num_walks; ++r) {
    const auto round_seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
    for (int v = 0; v < adj.size(); ++v) {
      Rng rng(derive_seed(round_seed, static_cast<std::uint64_t>(v)));
      corpus.walks.push_back(walker.walk(v, config.walk_length, rng));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

struct SgnsGradient {
  double loss = 0.0;
  Eigen::VectorXd center;                 // d loss / d input vector
  Eigen::VectorXd context;                // d loss / d positive output vector
  std::vector<Eigen::VectorXd> negatives; // d loss / d each negative output vector
};

/// Loss -log s(u_c . v) - sum_n log s(-u_n . v) and its gradient for one
/// (center, context, negatives) sample.
inline SgnsGradient sgns_gradient(const Eigen::VectorXd& center, const Eigen::VectorXd& context,
                                  const std::vector<Eigen::VectorXd>& negatives) {
  SgnsGradient g;
  const double sp = context.dot(center);
  g.loss = -log_sigmoid(sp);
  const double cp = sigmoid(sp) - 1.0;
  g.center = cp * context;
  g.context = cp * center;
  for (const auto& u : negatives) {
    const double sn = u.dot(center);
    g.loss -= log_sigmoid(-sn);
    const double cn = sigmoid(sn);
    g.center += cn * u;
    g.negatives.push_back(cn * center);
  }
  return g;
}

struct SkipGramResult {
  RowMatrix embeddings;        // input vectors, one row per node
  RowMatrix context_vectors;   // output vectors
  std::vector<double> epoch_loss;
  std::vector<bool> untrained; // never the center of a training pair
};

/// Initial input vectors: uniform in [-0.5/dim, 0.5/dim].
inline RowMatrix initial_embeddings(int num_nodes, int dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "skipgram-init"));
  RowMatrix m(num_nodes, dim);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = (rng.uniform() - 0.5) / dim;
  return m;
}

/// Single-threaded SGD over the corpus. Context windows are shrunk uniformly
/// to [1, window] per position; negatives are drawn from unigram^0.75.
inline SkipGramResult train_skipgram(const WalkCorpus& corpus, int num_nodes,
                                     const Node2VecConfig& config) {
  config.validate();
  if (corpus.walks.empty()) throw Error("train_skipgram: empty corpus");
  const int dim = config.dim;
  SkipGramResult r;
  r.embeddings = initial_embeddings(num_nodes, dim, config.seed);
  r.context_vectors = RowMatrix::Zero(num_nodes, dim);
  r.untrained.assign(static_cast<std::size_t>(num_nodes), true);

  std::vector<double> freq(static_cast<std::size_t>(num_nodes), 0.0);
  for (const auto& w : corpus.walks)
    for (int v : w) {
      if (v < 0 || v >= num_nodes) throw Error("train_skipgram: node index out of range");
      freq[static_cast<std::size_t>(v)] += 1.0;
    }
  for (double& f : freq) f = std::pow(f, 0.75);
  const AliasTable noise(freq);

  Rng rng(derive_seed(config.seed, "skipgram"));
  const double total = static_cast<double>(config.epochs) * static_cast<double>(corpus.tokens());
  double processed = 0.0;
  Eigen::VectorXd acc(dim);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    for (const auto& walk : corpus.walks) {
      const auto len = static_cast<int>(walk.size());
      for (int i = 0; i < len; ++i, processed += 1.0) {
        const double lr = config.learning_rate *
                          std::max(1.0 - processed / total, config.min_learning_rate_ratio);
        const int b = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(config.window)));
        const int center = walk[static_cast<std::size_t>(i)];
        auto v = r.embeddings.row(center);
        for (int j = std::max(0, i - b); j <= std::min(len - 1, i + b); ++j) {
          if (j == i) continue;
          const int context = walk[static_cast<std::size_t>(j)];
          acc.setZero();
          for (int s = 0; s <= config.negatives; ++s) {
            int target;
            double label;
            if (s == 0) {
              target = context;
              label = 1.0;
            } else {
              target = static_cast<int>(noise.draw(rng));
              if (target == context) continue;
              label = 0.0;
            }
            auto u = r.context_vectors.row(target);
            const double x = u.dot(v);
            loss_sum -= label > 0 ? log_sigmoid(x) : log_sigmoid(-x);
            const double g = (label - sigmoid(x)) * lr;
            acc.noalias() += g * u.transpose();
            u.noalias() += g * v;
          }
          v.noalias() += acc.transpose();
          r.untrained[static_cast<std::size_t>(center)] = false;
          ++pairs;
        }
      }
    }
    r.epoch_loss.push_back(pairs ? loss_sum / static_cast<double>(pairs) : 0.0);
  }
  return r;
}

/// Walks + skip-gram over the graph in `order`.
inline EmbeddingMatrix embed(const graph::MediaGraph& g, const graph::NodeIndex& order,
                             const Node2VecConfig& config, SkipGramResult* details = nullptr) {
  const graph::Adjacency adj(g, order, config.weighted);
  const auto corpus = sample_walks(adj, config);
  auto result = train_skipgram(corpus, order.size(), config);
  std::size_t untrained = 0;
  for (bool u : result.untrained) untrained += u;
  if (untrained)
    log::info("node2vec: " + std::to_string(untrained) + " nodes kept their initial vectors");
  EmbeddingMatrix e{"node2vec", order.domains(), result.embeddings};
  if (details) *details = std::move(result);
  return e;
}

}  // namespace mediaprof::node2vec
