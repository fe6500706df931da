#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "common.hpp"
#include "embedding.hpp"
#include "evalkit.hpp"

namespace mediaprof::svm {

using Matrix = RowMatrix;

// ---------------------------------------------------------------------------
// Kernels

/// Pairwise squared Euclidean distances between the rows of a and b.
inline Eigen::MatrixXd squared_distances(const Matrix& a, const Matrix& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * (a * b.transpose());
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

inline Eigen::MatrixXd rbf_from_distances(const Eigen::MatrixXd& d2, double gamma) {
  return (-gamma * d2.array()).exp().matrix();
}

// ---------------------------------------------------------------------------
// Binary C-SVC by SMO with second-order working set selection.

struct SmoResult {
  std::vector<double> alpha;
  double rho = 0.0;
  int iterations = 0;
  bool converged = true;
};

/// Solves min 1/2 a^T Q a - e^T a, 0 <= a <= C, y^T a = 0 with Q_ij = y_i y_j K_ij,
/// stopping when the maximal KKT violation drops below `tolerance`.
inline SmoResult solve_smo(const Eigen::MatrixXd& kernel, std::span<const int> y, double c,
                           double tolerance = 1e-3) {
  const auto n = static_cast<int>(y.size());
  if (kernel.rows() != n || kernel.cols() != n) throw Error("solve_smo: kernel shape mismatch");
  constexpr double tau = 1e-12;
  constexpr double inf = std::numeric_limits<double>::infinity();
  SmoResult r;
  r.alpha.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> grad(static_cast<std::size_t>(n), -1.0);
  auto& a = r.alpha;
  auto upper = [&](int t) { return a[t] >= c; };
  auto lower = [&](int t) { return a[t] <= 0.0; };
  // Column access; the kernel is symmetric and column-major.
  auto q = [&](int i, int j) { return static_cast<double>(y[i] * y[j]) * kernel(j, i); };

  const int max_iter = std::max(10000000, n > std::numeric_limits<int>::max() / 100 ? n : 100 * n);
  for (;;) {
    if (r.iterations >= max_iter) {
      r.converged = false;
      log::warn("solve_smo: reached iteration limit");
      break;
    }
    double gmax = -inf, gmax2 = -inf, best = inf;
    int i = -1, j = -1;
    for (int t = 0; t < n; ++t) {
      if (y[t] == 1) {
        if (!upper(t) && -grad[t] >= gmax) { gmax = -grad[t]; i = t; }
      } else {
        if (!lower(t) && grad[t] >= gmax) { gmax = grad[t]; i = t; }
      }
    }
    if (i >= 0) {
      for (int t = 0; t < n; ++t) {
        double diff, quad;
        if (y[t] == 1) {
          if (lower(t)) continue;
          gmax2 = std::max(gmax2, grad[t]);
          diff = gmax + grad[t];
          quad = kernel(i, i) + kernel(t, t) - 2.0 * y[i] * q(i, t);
        } else {
          if (upper(t)) continue;
          gmax2 = std::max(gmax2, -grad[t]);
          diff = gmax - grad[t];
          quad = kernel(i, i) + kernel(t, t) + 2.0 * y[i] * q(i, t);
        }
        if (diff > 0.0) {
          const double obj = -(diff * diff) / (quad > 0.0 ? quad : tau);
          if (obj <= best) { best = obj; j = t; }
        }
      }
    }
    if (i < 0 || j < 0 || gmax + gmax2 < tolerance) break;
    ++r.iterations;

    const double ai = a[i], aj = a[j];
    if (y[i] != y[j]) {
      double quad = kernel(i, i) + kernel(j, j) + 2.0 * q(i, j);
      if (quad <= 0.0) quad = tau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0.0) {
        if (a[j] < 0.0) { a[j] = 0.0; a[i] = diff; }
      } else {
        if (a[i] < 0.0) { a[i] = 0.0; a[j] = -diff; }
      }
      if (diff > 0.0) {
        if (a[i] > c) { a[i] = c; a[j] = c - diff; }
      } else {
        if (a[j] > c) { a[j] = c; a[i] = c + diff; }
      }
    } else {
      double quad = kernel(i, i) + kernel(j, j) - 2.0 * q(i, j);
      if (quad <= 0.0) quad = tau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > c) {
        if (a[i] > c) { a[i] = c; a[j] = sum - c; }
      } else {
        if (a[j] < 0.0) { a[j] = 0.0; a[i] = sum; }
      }
      if (sum > c) {
        if (a[j] > c) { a[j] = c; a[i] = sum - c; }
      } else {
        if (a[i] < 0.0) { a[i] = 0.0; a[j] = sum; }
      }
    }
    const double di = a[i] - ai, dj = a[j] - aj;
    for (int t = 0; t < n; ++t) grad[t] += q(i, t) * di + q(j, t) * dj;
  }

  double ub = inf, lb = -inf, free_sum = 0.0;
  int free = 0;
  for (int t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++free;
      free_sum += yg;
    }
  }
  r.rho = free > 0 ? free_sum / free : (ub + lb) / 2.0;
  return r;
}

// ---------------------------------------------------------------------------
// Platt scaling: P(positive | f) = 1 / (1 + exp(A f + B)), fitted by Newton's
// method with backtracking on regularized targets.

struct PlattSigmoid {
  double a = 0.0;
  double b = 0.0;

  double operator()(double f) const {
    const double z = f * a + b;
    return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
  }
};

inline PlattSigmoid fit_platt(std::span<const double> decision, std::span<const int> y) {
  if (decision.size() != y.size()) throw Error("fit_platt: length mismatch");
  double prior1 = 0, prior0 = 0;
  for (int v : y) (v > 0 ? prior1 : prior0) += 1;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0), lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] > 0 ? hi : lo;

  auto objective = [&](double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double z = decision[i] * a + b;
      f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1.0) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  PlattSigmoid s{0.0, std::log((prior0 + 1.0) / (prior1 + 1.0))};
  double fval = objective(s.a, s.b);
  constexpr int max_iter = 100;
  constexpr double min_step = 1e-10, sigma = 1e-12, eps = 1e-5;
  for (int it = 0; it < max_iter; ++it) {
    double h11 = sigma, h22 = sigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double z = decision[i] * s.a + s.b;
      double p, q;
      if (z >= 0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += decision[i] * decision[i] * d2;
      h22 += d2;
      h21 += decision[i] * d2;
      const double d1 = t[i] - p;
      g1 += decision[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < eps && std::abs(g2) < eps) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= min_step) {
      const double na = s.a + step * da, nb = s.b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        s = {na, nb};
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < min_step) break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Standardization

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(x.rows());
      s.scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  static Standardizer identity(Eigen::Index dim) {
    return {Eigen::RowVectorXd::Zero(dim), Eigen::RowVectorXd::Ones(dim)};
  }

  Matrix apply(const Matrix& x) const {
    Matrix out = x;
    out.rowwise() -= mean;
    out.array().rowwise() /= scale.array();
    return out;
  }
};

// ---------------------------------------------------------------------------
// One-vs-rest calibrated RBF model

struct SvmConfig {
  std::vector<double> c_grid{0.1, 1.0, 10.0, 100.0};
  std::vector<double> gamma_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  int inner_folds = 5;
  double tolerance = 1e-3;
  bool standardize = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (c_grid.empty() || gamma_grid.empty()) throw Error("svm: grids must be nonempty");
    for (double v : c_grid)
      if (!(v > 0.0)) throw Error("svm: C values must be positive");
    for (double v : gamma_grid)
      if (!(v > 0.0)) throw Error("svm: gamma values must be positive");
    if (inner_folds < 2) throw Error("svm: inner_folds must be >= 2");
  }
};

inline void to_json(nlohmann::json& j, const SvmConfig& c) {
  j = {{"C", c.c_grid},
       {"gamma", c.gamma_grid},
       {"inner_folds", c.inner_folds},
       {"tolerance", c.tolerance},
       {"standardize", c.standardize},
       {"seed", c.seed}};
}

inline constexpr double kProbabilityFloor = 1e-7;

struct BinaryMachine {
  Matrix support;             // standardized support vectors
  Eigen::VectorXd coef;       // alpha_i * y_i
  double rho = 0.0;
  std::optional<double> constant;  // decision value when the class set was degenerate
  PlattSigmoid platt;
};

struct SvmModel {
  int num_classes = 0;
  double c = 0.0;
  double gamma = 0.0;
  double grid_score = 0.0;  // inner-CV macro-F1 of the chosen cell
  Standardizer standardizer;
  std::vector<BinaryMachine> machines;  // one per class
  std::optional<int> constant_class;    // single-class training data

  Eigen::Index input_dim() const { return standardizer.mean.size(); }

  /// n x c one-vs-rest decision values.
  Eigen::MatrixXd decision_values(const Matrix& x) const {
    if (x.cols() != input_dim()) throw Error("svm: input dimension mismatch");
    Eigen::MatrixXd out(x.rows(), num_classes);
    const Matrix z = standardizer.apply(x);
    for (int k = 0; k < num_classes; ++k) {
      const auto& m = machines[static_cast<std::size_t>(k)];
      if (m.constant) {
        out.col(k).setConstant(*m.constant);
      } else {
        const Eigen::MatrixXd kern = rbf_from_distances(squared_distances(z, m.support), gamma);
        out.col(k) = (kern * m.coef).array() - m.rho;
      }
    }
    return out;
  }

  /// Per-class Platt probabilities, clamped to [1e-7, 1 - 1e-7], normalized by their sum.
  Eigen::MatrixXd predict_proba(const Matrix& x) const {
    if (x.cols() != input_dim()) throw Error("svm: input dimension mismatch");
    Eigen::MatrixXd p(x.rows(), num_classes);
    if (constant_class) {
      p.setConstant(kProbabilityFloor);
      p.col(*constant_class).setConstant(1.0);
    } else {
      const Eigen::MatrixXd d = decision_values(x);
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        for (int k = 0; k < num_classes; ++k)
          p(i, k) = std::clamp(machines[static_cast<std::size_t>(k)].platt(d(i, k)), kProbabilityFloor,
                               1.0 - kProbabilityFloor);
    }
    for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) /= p.row(i).sum();
    return p;
  }

  std::vector<int> predict(const Matrix& x) const {
    const Eigen::MatrixXd p = predict_proba(x);
    std::vector<int> out(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i).maxCoeff(&out[static_cast<std::size_t>(i)]);
    return out;
  }

  /// Hash of every fitted parameter.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const double* p, std::size_t n) {
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p), n * sizeof(double)), h);
    };
    const double head[] = {static_cast<double>(num_classes), c, gamma,
                           constant_class ? static_cast<double>(*constant_class) : -1.0};
    mix(head, 4);
    mix(standardizer.mean.data(), static_cast<std::size_t>(standardizer.mean.size()));
    mix(standardizer.scale.data(), static_cast<std::size_t>(standardizer.scale.size()));
    for (const auto& m : machines) {
      mix(m.support.data(), static_cast<std::size_t>(m.support.size()));
      mix(m.coef.data(), static_cast<std::size_t>(m.coef.size()));
      const double tail[] = {m.rho, m.constant.value_or(0.0), m.platt.a, m.platt.b};
      mix(tail, 4);
    }
    return h;
  }
};

namespace detail {

/// A machine expressed against rows of a precomputed kernel matrix.
struct KernelMachine {
  std::vector<int> support_rows;
  Eigen::VectorXd coef;  // alpha_i * y_i
  double rho = 0.0;
  std::optional<double> constant;
};

/// Trains "class k vs rest" on the rows `idx` of the kernel.
inline KernelMachine fit_machine(const Eigen::MatrixXd& kernel, std::span<const int> idx,
                                 std::span<const int> labels, int k, double c, double tolerance) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  std::vector<int> y(idx.size());
  int pos = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    y[i] = labels[static_cast<std::size_t>(idx[i])] == k ? 1 : -1;
    pos += y[i] > 0;
  }
  KernelMachine m;
  if (pos == 0 || pos == static_cast<int>(y.size())) {
    m.constant = pos == 0 ? -1.0 : 1.0;
    return m;
  }
  Eigen::MatrixXd sub(n, n);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index a = 0; a < n; ++a) sub(a, b) = kernel(idx[a], idx[b]);
  const auto sol = solve_smo(sub, y, c, tolerance);
  m.rho = sol.rho;
  std::vector<double> coef;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (sol.alpha[i] <= 0.0) continue;
    m.support_rows.push_back(idx[i]);
    coef.push_back(sol.alpha[i] * y[i]);
  }
  m.coef = Eigen::Map<Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
  return m;
}

inline Eigen::VectorXd machine_decision(const KernelMachine& m, const Eigen::MatrixXd& kernel,
                                        std::span<const int> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (m.constant) {
      out(static_cast<Eigen::Index>(r)) = *m.constant;
      continue;
    }
    double s = 0.0;
    for (std::size_t t = 0; t < m.support_rows.size(); ++t)
      s += m.coef(static_cast<Eigen::Index>(t)) * kernel(rows[r], m.support_rows[t]);
    out(static_cast<Eigen::Index>(r)) = s - m.rho;
  }
  return out;
}

inline int argmax_row(const Eigen::MatrixXd& d, Eigen::Index i) {
  int k = 0;
  d.row(i).maxCoeff(&k);
  return k;
}

}  // namespace detail

/// Fits the calibrated one-vs-rest model. Every (C, gamma) cell is scored by
/// mean inner-fold macro-F1 (argmax of decision values); the first best cell in
/// grid order wins. Platt sigmoids are fitted on that cell's out-of-fold
/// decision values, then the machines are refit on all rows.
inline SvmModel train_svm_rbf(const Matrix& x, std::span<const int> y, int num_classes,
                              const SvmConfig& config) {
  config.validate();
  if (x.rows() != static_cast<Eigen::Index>(y.size())) throw Error("train_svm_rbf: row/label mismatch");
  if (x.rows() == 0) throw Error("train_svm_rbf: no training data");
  for (int v : y)
    if (v < 0 || v >= num_classes) throw Error("train_svm_rbf: label outside class set");

  SvmModel model;
  model.num_classes = num_classes;
  model.standardizer = config.standardize ? Standardizer::fit(x) : Standardizer::identity(x.cols());
  model.machines.resize(static_cast<std::size_t>(num_classes));

  std::vector<int> present;
  for (int k = 0; k < num_classes; ++k)
    if (std::find(y.begin(), y.end(), k) != y.end()) present.push_back(k);
  if (present.size() == 1) {
    log::warn("train_svm_rbf: single-class training data, using a constant predictor");
    model.constant_class = present.front();
    for (auto& m : model.machines) m.constant = -1.0;
    model.machines[static_cast<std::size_t>(present.front())].constant = 1.0;
    return model;
  }

  const Matrix z = model.standardizer.apply(x);
  const Eigen::MatrixXd d2 = squared_distances(z, z);
  const auto n = static_cast<int>(y.size());
  const auto fold = eval::stratified_folds(y, config.inner_folds, derive_seed(config.seed, "inner-cv"));
  std::vector<std::vector<int>> train_idx(static_cast<std::size_t>(config.inner_folds)),
      test_idx(static_cast<std::size_t>(config.inner_folds));
  for (int i = 0; i < n; ++i)
    for (int f = 0; f < config.inner_folds; ++f)
      (fold[static_cast<std::size_t>(i)] == f ? test_idx : train_idx)[static_cast<std::size_t>(f)].push_back(i);

  double best_score = -1.0;
  Eigen::MatrixXd best_oof;
  for (double c : config.c_grid) {
    for (double gamma : config.gamma_grid) {
      const Eigen::MatrixXd kernel = rbf_from_distances(d2, gamma);
      Eigen::MatrixXd oof(n, num_classes);
      double score = 0.0;
      int scored = 0;
      for (int f = 0; f < config.inner_folds; ++f) {
        const auto& tr = train_idx[static_cast<std::size_t>(f)];
        const auto& te = test_idx[static_cast<std::size_t>(f)];
        if (te.empty() || tr.empty()) continue;
        for (int k = 0; k < num_classes; ++k) {
          const auto m = detail::fit_machine(kernel, tr, y, k, c, config.tolerance);
          const auto dv = detail::machine_decision(m, kernel, te);
          for (std::size_t r = 0; r < te.size(); ++r) oof(te[r], k) = dv(static_cast<Eigen::Index>(r));
        }
        std::vector<int> truth, pred;
        for (int i : te) {
          truth.push_back(y[static_cast<std::size_t>(i)]);
          pred.push_back(detail::argmax_row(oof, i));
        }
        score += eval::macro_f1(truth, pred, num_classes);
        ++scored;
      }
      score /= std::max(scored, 1);
      if (score > best_score) {
        best_score = score;
        model.c = c;
        model.gamma = gamma;
        best_oof = oof;
      }
    }
  }
  model.grid_score = best_score;

  const Eigen::MatrixXd kernel = rbf_from_distances(d2, model.gamma);
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  for (int k = 0; k < num_classes; ++k) {
    const auto km = detail::fit_machine(kernel, all, y, k, model.c, config.tolerance);
    BinaryMachine m;
    m.rho = km.rho;
    m.constant = km.constant;
    if (km.constant) {
      // Class absent from the training rows: its posterior sits at the floor.
      m.platt = {0.0, 30.0};
    } else {
      std::vector<double> dv(static_cast<std::size_t>(n));
      std::vector<int> yk(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        dv[static_cast<std::size_t>(i)] = best_oof(i, k);
        yk[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] == k ? 1 : -1;
      }
      m.platt = fit_platt(dv, yk);
      m.coef = km.coef;
      m.support.resize(static_cast<Eigen::Index>(km.support_rows.size()), z.cols());
      for (std::size_t s = 0; s < km.support_rows.size(); ++s)
        m.support.row(static_cast<Eigen::Index>(s)) = z.row(km.support_rows[s]);
    }
    model.machines[static_cast<std::size_t>(k)] = std::move(m);
  }
  return model;
}

}  // namespace mediaprof::svm
