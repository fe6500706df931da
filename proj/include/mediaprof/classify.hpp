#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "common.hpp"
#include "embedding.hpp"
#include "evalkit.hpp"
#include "graphstore.hpp"
#include "svm.hpp"

namespace mediaprof::classify {

/// One representation of every domain in a shared ordering. Semi-supervised
/// representations may carry one matrix per outer CV fold, each trained
/// without that fold's labels.
struct RepresentationChannel {
  std::string name;
  std::vector<std::string> domains;
  RowMatrix matrix;
  std::vector<bool> coverage;
  std::vector<RowMatrix> fold_matrices;

  Eigen::Index dim() const { return matrix.cols(); }

  const RowMatrix& for_fold(int fold) const {
    if (fold_matrices.empty()) return matrix;
    return fold_matrices.at(static_cast<std::size_t>(fold));
  }
};

inline RepresentationChannel make_channel(std::string name, const EmbeddingMatrix& e) {
  return {std::move(name), e.domains, e.values, std::vector<bool>(e.domains.size(), true), {}};
}

/// Reads `domain,v0..v{d-1}` and aligns it to `domains`. Domains absent from
/// the file get a zero vector and coverage false.
inline RepresentationChannel ingest_external_representation(const std::string& path,
                                                            const std::vector<std::string>& domains,
                                                            std::string name = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open channel file " + path);
  auto raw = read_matrix_csv(in, path);
  if (raw.values.cols() == 0) throw ParseError(path + ": channel has no value columns");

  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < domains.size(); ++i) row_of.emplace(domains[i], static_cast<Eigen::Index>(i));

  RepresentationChannel ch;
  ch.name = name.empty() ? path : std::move(name);
  ch.domains = domains;
  ch.matrix = RowMatrix::Zero(static_cast<Eigen::Index>(domains.size()), raw.values.cols());
  ch.coverage.assign(domains.size(), false);
  std::vector<std::string> unknown;
  for (std::size_t i = 0; i < raw.domains.size(); ++i) {
    const auto d = graph::normalize_domain(raw.domains[i]);
    auto it = row_of.find(d);
    if (it == row_of.end()) {
      unknown.push_back(d);
      continue;
    }
    if (ch.coverage[static_cast<std::size_t>(it->second)])
      throw ParseError(path + ": duplicate row for " + d);
    ch.matrix.row(it->second) = raw.values.row(static_cast<Eigen::Index>(i));
    ch.coverage[static_cast<std::size_t>(it->second)] = true;
  }
  if (!unknown.empty()) {
    std::string list;
    for (std::size_t i = 0; i < unknown.size() && i < 20; ++i) list += (i ? ", " : "") + unknown[i];
    if (unknown.size() > 20) list += ", ...";
    throw Error(path + ": " + std::to_string(unknown.size()) + " unknown domain(s): " + list);
  }
  return ch;
}

/// Writes the covered rows only, so a read-back reproduces the same matrix.
inline void write_channel(const RepresentationChannel& ch, std::ostream& out) {
  std::vector<std::string> doms;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < ch.domains.size(); ++i)
    if (ch.coverage[i]) {
      doms.push_back(ch.domains[i]);
      rows.push_back(static_cast<Eigen::Index>(i));
    }
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), ch.matrix.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = ch.matrix.row(rows[r]);
  write_matrix_csv(doms, m, out, "v");
}

// ---------------------------------------------------------------------------
// Cross-validation

struct LabeledSet {
  std::vector<std::string> domains;
  std::vector<int> labels;

  std::size_t size() const { return domains.size(); }
};

inline std::vector<int> fold_assignment(const LabeledSet& set, int folds, std::uint64_t seed) {
  return eval::stratified_folds(set.labels, folds, derive_seed(seed, "outer-cv"));
}

struct FoldFit {
  double c = 0.0;
  double gamma = 0.0;
  double grid_score = 0.0;
  std::uint64_t fingerprint = 0;
};

struct ChannelResult {
  std::string name;
  eval::EvalReport report;
  Eigen::MatrixXd oof;       // out-of-fold posteriors, rows follow LabeledSet
  std::vector<FoldFit> fits; // per fold
};

/// Rows of `ch` for the given domains.
inline RowMatrix gather_rows(const RowMatrix& source, const RepresentationChannel& ch,
                             const std::vector<std::string>& domains, const std::vector<int>& pick) {
  std::unordered_map<std::string, Eigen::Index> row_of;
  for (std::size_t i = 0; i < ch.domains.size(); ++i) row_of.emplace(ch.domains[i], static_cast<Eigen::Index>(i));
  RowMatrix out(static_cast<Eigen::Index>(pick.size()), source.cols());
  for (std::size_t r = 0; r < pick.size(); ++r) {
    auto it = row_of.find(domains[static_cast<std::size_t>(pick[r])]);
    if (it == row_of.end())
      throw Error("channel " + ch.name + " does not cover " + domains[static_cast<std::size_t>(pick[r])]);
    out.row(static_cast<Eigen::Index>(r)) = source.row(it->second);
  }
  return out;
}

/// Trains one fold: standardization, grid search and calibration see only the
/// training rows.
inline svm::SvmModel fit_fold(const RepresentationChannel& ch, const LabeledSet& set,
                              const std::vector<int>& train_rows, int fold, int num_classes,
                              const svm::SvmConfig& base) {
  svm::SvmConfig cfg = base;
  cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(fold));
  const RowMatrix x = gather_rows(ch.for_fold(fold), ch, set.domains, train_rows);
  std::vector<int> y;
  y.reserve(train_rows.size());
  for (int r : train_rows) y.push_back(set.labels[static_cast<std::size_t>(r)]);
  return svm::train_svm_rbf(x, y, num_classes, cfg);
}

inline ChannelResult cross_validate_channel(const RepresentationChannel& ch, const LabeledSet& set,
                                            const eval::Task& task, const std::vector<int>& fold_of,
                                            int folds, const svm::SvmConfig& config) {
  const int c = task.num_classes();
  ChannelResult r;
  r.name = ch.name;
  r.oof = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(set.size()), c);
  std::vector<int> pred(set.size(), 0);
  for (int f = 0; f < folds; ++f) {
    std::vector<int> tr, te;
    for (std::size_t i = 0; i < set.size(); ++i) (fold_of[i] == f ? te : tr).push_back(static_cast<int>(i));
    if (te.empty()) continue;
    const auto model = fit_fold(ch, set, tr, f, c, config);
    const Eigen::MatrixXd p = model.predict_proba(gather_rows(ch.for_fold(f), ch, set.domains, te));
    for (std::size_t k = 0; k < te.size(); ++k) {
      r.oof.row(te[k]) = p.row(static_cast<Eigen::Index>(k));
      p.row(static_cast<Eigen::Index>(k)).maxCoeff(&pred[static_cast<std::size_t>(te[k])]);
    }
    r.fits.push_back({model.c, model.gamma, model.grid_score, model.fingerprint()});
  }
  r.report = eval::make_report(task, ch.name, set.labels, pred, fold_of, folds);
  nlohmann::json fits = nlohmann::json::array();
  for (const auto& fit : r.fits)
    fits.push_back({{"C", fit.c}, {"gamma", fit.gamma}, {"inner_macro_f1", fit.grid_score}});
  r.report.details["hyperparameters"] = fits;
  return r;
}

/// Stratified k-fold evaluation of every channel on the labeled set.
inline std::vector<ChannelResult> cross_validate(const std::vector<RepresentationChannel>& channels,
                                                 const LabeledSet& set, const eval::Task& task,
                                                 int folds, std::uint64_t seed,
                                                 const svm::SvmConfig& config) {
  if (set.size() == 0) throw Error("cross_validate: no labeled domains");
  const auto fold_of = fold_assignment(set, folds, seed);
  std::vector<ChannelResult> out;
  for (const auto& ch : channels) {
    if (!ch.fold_matrices.empty() && static_cast<int>(ch.fold_matrices.size()) != folds)
      throw Error("channel " + ch.name + " has per-fold matrices for a different fold count");
    out.push_back(cross_validate_channel(ch, set, task, fold_of, folds, config));
  }
  return out;
}

/// Refits fold 0 with the held-out labels permuted and reports whether the
/// fitted parameters changed. True means the fold is leakage-free.
inline bool leakage_check(const RepresentationChannel& ch, const LabeledSet& set,
                          const eval::Task& task, const std::vector<int>& fold_of,
                          const svm::SvmConfig& config, std::uint64_t seed) {
  std::vector<int> tr, te;
  for (std::size_t i = 0; i < set.size(); ++i) (fold_of[i] == 0 ? te : tr).push_back(static_cast<int>(i));
  const auto reference = fit_fold(ch, set, tr, 0, task.num_classes(), config).fingerprint();
  LabeledSet shuffled = set;
  std::vector<int> held;
  for (int i : te) held.push_back(set.labels[static_cast<std::size_t>(i)]);
  Rng rng(derive_seed(seed, "leakage-check"));
  rng.shuffle(held);
  for (std::size_t k = 0; k < te.size(); ++k)
    shuffled.labels[static_cast<std::size_t>(te[k])] = (held[k] + 1) % task.num_classes();
  return fit_fold(ch, shuffled, tr, 0, task.num_classes(), config).fingerprint() == reference;
}

// ---------------------------------------------------------------------------
// Late fusion

inline void validate_weights(const std::vector<double>& w) {
  double s = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw Error("fusion weights must be nonnegative");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error("fusion weights must sum to 1");
}

/// sum_i w_i P_i
inline Eigen::MatrixXd late_fuse(const std::vector<Eigen::MatrixXd>& posteriors,
                                 const std::vector<double>& weights) {
  if (posteriors.empty()) throw Error("late_fuse: no posteriors");
  if (posteriors.size() != weights.size()) throw Error("late_fuse: one weight per channel required");
  validate_weights(weights);
  for (const auto& p : posteriors)
    if (p.rows() != posteriors[0].rows() || p.cols() != posteriors[0].cols())
      throw Error("late_fuse: posterior shapes differ");
  Eigen::MatrixXd fused(posteriors[0].rows(), posteriors[0].cols());
  for (Eigen::Index r = 0; r < fused.rows(); ++r)
    for (Eigen::Index c = 0; c < fused.cols(); ++c) {
      // Entries agreeing across all weighted channels pass through unrounded.
      double sum = 0.0, first = 0.0;
      bool agree = true, seen = false;
      for (std::size_t i = 0; i < posteriors.size(); ++i) {
        if (weights[i] == 0.0) continue;
        const double x = posteriors[i](r, c);
        if (!seen) {
          first = x;
          seen = true;
        } else if (x != first) {
          agree = false;
        }
        sum += weights[i] * x;
      }
      fused(r, c) = agree ? first : sum;
    }
  return fused;
}

inline std::vector<int> argmax_rows(const Eigen::MatrixXd& p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
  return out;
}

inline std::vector<double> uniform_weights(std::size_t m) {
  return std::vector<double>(m, 1.0 / static_cast<double>(m));
}

/// Every point of the simplex grid with spacing 1/steps, in lexicographic order.
inline std::vector<std::vector<double>> simplex_grid(std::size_t m, int steps) {
  std::vector<std::vector<double>> out;
  std::vector<int> parts(m, 0);
  auto rec = [&](auto&& self, std::size_t i, int left) -> void {
    if (i + 1 == m) {
      parts[i] = left;
      std::vector<double> w(m);
      for (std::size_t k = 0; k < m; ++k) w[k] = static_cast<double>(parts[k]) / steps;
      out.push_back(std::move(w));
      return;
    }
    for (int v = left; v >= 0; --v) {
      parts[i] = v;
      self(self, i + 1, left - v);
    }
  };
  rec(rec, 0, steps);
  return out;
}

/// Simplex weights maximizing macro-F1 of the fused posteriors on a grid of
/// the given resolution. Ties on macro-F1 are broken by lower log-loss; ties
/// on both go to uniform weights when uniform is among them, otherwise to the
/// tied point closest to uniform.
inline std::vector<double> fit_fusion_weights(const std::vector<Eigen::MatrixXd>& posteriors,
                                              const std::vector<int>& labels, int num_classes,
                                              double resolution = 0.05) {
  const auto m = posteriors.size();
  if (m == 0) throw Error("fit_fusion_weights: no channels");
  if (m == 1) return {1.0};
  for (const auto& p : posteriors)
    if (p.rows() != static_cast<Eigen::Index>(labels.size()) || p.cols() != num_classes)
      throw Error("fit_fusion_weights: posterior shape mismatch");
  const int steps = static_cast<int>(std::lround(1.0 / resolution));

  struct Score {
    double f1;
    double logloss;
  };
  auto score = [&](const std::vector<double>& w) {
    const Eigen::MatrixXd fused = late_fuse(posteriors, w);
    double ll = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      ll -= std::log(std::max(fused(static_cast<Eigen::Index>(i), labels[i]), 1e-300));
    return Score{eval::macro_f1(labels, argmax_rows(fused), num_classes),
                 ll / static_cast<double>(labels.size())};
  };
  auto same = [](const Score& a, const Score& b) {
    return a.f1 == b.f1 && std::abs(a.logloss - b.logloss) <= 1e-9 * std::max(1.0, std::abs(a.logloss));
  };
  auto better = [&](const Score& a, const Score& b) {
    if (a.f1 != b.f1) return a.f1 > b.f1;
    return !same(a, b) && a.logloss < b.logloss;
  };
  auto distance_to_uniform = [&](const std::vector<double>& w) {
    double d = 0.0;
    for (double x : w) d += (x - 1.0 / static_cast<double>(m)) * (x - 1.0 / static_cast<double>(m));
    return d;
  };

  const auto uniform = uniform_weights(m);
  const Score uniform_score = score(uniform);
  std::vector<double> best = uniform;
  Score best_score = uniform_score;
  for (const auto& w : simplex_grid(m, steps)) {
    const Score s = score(w);
    if (better(s, best_score)) {
      best = w;
      best_score = s;
    } else if (same(s, best_score) && !same(best_score, uniform_score) &&
               distance_to_uniform(w) < distance_to_uniform(best)) {
      best = w;
    }
  }
  return best;
}

enum class FusionMode { uniform, learned };

struct FusionResult {
  std::vector<std::string> channels;
  Eigen::MatrixXd fused;                   // out-of-fold fused posteriors
  std::vector<std::vector<double>> weights;  // per fold
  eval::EvalReport report;
};

/// Fuses out-of-fold posteriors. Learned weights for fold f are fitted on the
/// other folds' rows only.
inline FusionResult fuse_out_of_fold(const std::vector<ChannelResult>& results, const LabeledSet& set,
                                     const eval::Task& task, const std::vector<int>& fold_of,
                                     int folds, FusionMode mode, const std::string& id = "late-fusion") {
  if (results.empty()) throw Error("fuse: no channels");
  FusionResult out;
  std::vector<Eigen::MatrixXd> post;
  for (const auto& r : results) {
    out.channels.push_back(r.name);
    post.push_back(r.oof);
  }
  out.fused = Eigen::MatrixXd::Zero(post[0].rows(), post[0].cols());
  for (int f = 0; f < folds; ++f) {
    std::vector<int> tr, te;
    for (std::size_t i = 0; i < set.size(); ++i) (fold_of[i] == f ? te : tr).push_back(static_cast<int>(i));
    std::vector<double> w = uniform_weights(post.size());
    if (mode == FusionMode::learned && !tr.empty()) {
      std::vector<Eigen::MatrixXd> sub;
      for (const auto& p : post) sub.push_back(p(tr, Eigen::all));
      std::vector<int> y;
      for (int i : tr) y.push_back(set.labels[static_cast<std::size_t>(i)]);
      w = fit_fusion_weights(sub, y, task.num_classes());
    }
    if (te.empty()) continue;
    std::vector<Eigen::MatrixXd> sub;
    for (const auto& p : post) sub.push_back(p(te, Eigen::all));
    const Eigen::MatrixXd fused = late_fuse(sub, w);
    for (std::size_t k = 0; k < te.size(); ++k) out.fused.row(te[k]) = fused.row(static_cast<Eigen::Index>(k));
    out.weights.push_back(std::move(w));
  }
  out.report = eval::make_report(task, id, set.labels, argmax_rows(out.fused), fold_of, folds);
  out.report.details["channels"] = out.channels;
  out.report.details["weights"] = out.weights;
  out.report.details["mode"] = mode == FusionMode::uniform ? "uniform" : "learned";
  return out;
}

}  // namespace mediaprof::classify
