// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "mediaprof/mediaprof.hpp"
#include "mediaprof/pipeline.hpp"
#include "oracles.hpp"

using namespace mediaprof;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Check {
  bool ok = true;
  std::ostringstream note;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) note << what << "; ";
    ok = ok && cond;
  }
};

std::string name(int i) { return "n" + std::to_string(1000 + i) + ".com"; }

graph::MediaGraph random_graph(Rng& rng, int n, double p, bool unit) {
  graph::MediaGraph g;
  for (int i = 0; i < n; ++i) g.add_node(name(i), 0, true);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(p)) g.add_edge(name(i), name(j), unit ? 1.0 : rng.uniform(0.5, 10.0));
  return g;
}

gnn::Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  gnn::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 1.0);
  return m;
}

fs::path scratch(const std::string& tag) {
  const auto p = fs::temp_directory_path() / ("mediaprof-acceptance-" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path config_dir() { return MEDIAPROF_CONFIG_DIR; }

pipeline::RunConfig load_into(const fs::path& config, const fs::path& out) {
  auto c = pipeline::load_config(config);
  c.output_dir = out;
  return c;
}

json read_json(const fs::path& p) { return json::parse(pipeline::read_file(p)); }

std::map<std::string, double> mean_f1(const json& reports) {
  std::map<std::string, double> m;
  for (const auto& r : reports.at("reports")) m[r.at("id")] = r.at("mean_macro_f1");
  return m;
}

// 1. Majority baselines from label counts.
void baselines(Check& c) {
  struct Row {
    const char* table;
    eval::Task task;
    std::array<int, 3> counts;  // in task class order
    double f1, acc;
  };
  const std::vector<Row> rows{
      {"2", eval::factuality_task(), {542, 268, 256}, 22.47, 50.84},
      {"3", eval::factuality_task(), {453, 249, 162}, 22.93, 52.43},
      {"4", eval::bias_task(), {189, 564, 313}, 22.61, 51.33},
      {"5", eval::bias_task(), {243, 272, 349}, 19.18, 40.39},
  };
  for (const auto& r : rows) {
    std::vector<int> y;
    for (int k = 0; k < 3; ++k) y.insert(y.end(), r.counts[k], k);
    const int maj = eval::majority_baseline(y, r.task);
    const std::vector<int> pred(y.size(), maj);
    const double f1 = 100.0 * eval::macro_f1(y, pred, 3), acc = 100.0 * eval::accuracy(y, pred);
    std::ostringstream s;
    s.precision(4);
    s << "table " << r.table << " gives " << f1 << "/" << acc << " vs " << r.f1 << "/" << r.acc;
    c.expect(std::abs(std::round(f1 * 100) / 100 - r.f1) <= 0.01 + 1e-9 &&
                 std::abs(std::round(acc * 100) / 100 - r.acc) <= 0.01 + 1e-9,
             s.str());
  }
}

// 2. Gradient checks.
void gradients(Check& c) {
  Rng rng(21);
  graph::MediaGraph g;
  for (int i = 0; i < 8; ++i) g.add_node(name(i), 0, true);
  const std::vector<std::tuple<int, int, double>> edges{{0, 1, 2}, {1, 2, 1}, {2, 3, 3}, {3, 4, 1}, {4, 5, 2},
                                                        {5, 6, 1}, {6, 7, 1}, {0, 7, 4}, {1, 5, 1}};
  for (auto [a, b, w] : edges) g.add_edge(name(a), name(b), w);
  const auto order = graph::NodeIndex::sorted(g);
  for (auto v : {gnn::Variant::gcn, gnn::Variant::sage}) {
    gnn::GnnConfig cfg;
    cfg.variant = v;
    cfg.layers = 2;
    cfg.hidden_dim = 5;
    cfg.dropout = 0.0;
    cfg.sage_sample_sizes = {2, 2};
    const auto ops = gnn::GraphOperators::build(g, order, cfg);
    auto model = gnn::init_model(cfg, 3, 3);
    for (auto& l : model.layers) l.bias = random_matrix(1, l.bias.size(), rng).row(0) * 0.1;
    const auto x = random_matrix(8, 3, rng);
    using gnn::Split;
    const gnn::LabelMask mask{{0, 1, 2, -1, 1, 2, 0, 1},
                              {Split::train, Split::train, Split::train, Split::unlabeled, Split::train, Split::train,
                               Split::train, Split::test}};
    const double err = gnn::grad_check(model, ops, x, mask, cfg, 1e-5);
    c.expect(err < 1e-5, gnn::to_string(v) + " relative error " + std::to_string(err));
  }

  const int d = 8;
  auto vec = [&] {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal(0.0, 0.7);
    return v;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd center = vec(), context = vec();
    std::vector<Eigen::VectorXd> neg{vec(), vec(), vec(), vec(), vec()};
    const auto grad = node2vec::sgns_gradient(center, context, neg);
    const double h = 1e-6;
    auto check = [&](Eigen::VectorXd& param, const Eigen::VectorXd& analytic) {
      for (int i = 0; i < d; ++i) {
        const double keep = param[i];
        param[i] = keep + h;
        const double up = node2vec::sgns_gradient(center, context, neg).loss;
        param[i] = keep - h;
        const double down = node2vec::sgns_gradient(center, context, neg).loss;
        param[i] = keep;
        const double numeric = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(numeric - analytic[i]) /
                                    std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3}));
      }
    };
    check(center, grad.center);
    check(context, grad.context);
    for (std::size_t n = 0; n < neg.size(); ++n) check(neg[n], grad.negatives[n]);
  }
  c.expect(worst < 1e-5, "skip-gram relative error " + std::to_string(worst));
}

// 3. Normalized adjacency and GCN equivariance.
void adjacency(Check& c) {
  graph::MediaGraph two;
  two.add_node(name(0), 0, true);
  two.add_node(name(1), 0, true);
  two.add_edge(name(0), name(1), 1.0);
  for (bool weighted : {true, false}) {
    const auto dense = graph::normalized_adjacency(two, graph::NodeIndex::sorted(two), weighted).to_dense();
    c.expect(dense == std::vector<std::vector<double>>{{0.5, 0.5}, {0.5, 0.5}}, "two-node example");
  }

  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(26));
    const auto g = random_graph(rng, n, 0.2, false);
    const auto sorted = graph::NodeIndex::sorted(g);
    const auto dense = graph::normalized_adjacency(g, sorted, true).to_dense();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) c.expect(dense[i][j] == dense[j][i], "asymmetric entry");

    auto domains = sorted.domains();
    rng.shuffle(domains);
    const graph::NodeIndex perm(domains);
    gnn::GnnConfig cfg;
    cfg.layers = 2;
    cfg.hidden_dim = 6;
    cfg.seed = 100 + trial;
    const auto model = gnn::init_model(cfg, 4, 3);
    const auto x = random_matrix(n, 4, rng);
    gnn::Matrix xp(n, 4);
    for (int i = 0; i < n; ++i) xp.row(perm.at(sorted.domain(i))) = x.row(i);
    const gnn::PassOptions opt{false, 0.0, 1, &cfg};
    const auto a = gnn::forward(model, gnn::GraphOperators::build(g, sorted, cfg), x, opt);
    const auto b = gnn::forward(model, gnn::GraphOperators::build(g, perm, cfg), xp, opt);
    for (int i = 0; i < n; ++i)
      c.expect(a.logits.row(i) == b.logits.row(perm.at(sorted.domain(i))),
               "equivariance broken in case " + std::to_string(trial));
  }
}

// 4. Node2Vec bias rule.
void walks(Check& c) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_graph(rng, 12, 0.4, false);
    const graph::Adjacency adj(g, graph::NodeIndex::sorted(g));
    for (int cur = 0; cur < adj.size(); ++cur) {
      const auto wt = adj.weights(cur);
      double total = 0.0;
      for (double w : wt) total += w;
      std::vector<double> first_order;
      for (double w : wt) first_order.push_back(w / total);
      for (int prev : adj.neighbors(cur))
        c.expect(node2vec::transition_weights(adj, prev, cur, 1.0, 1.0) == first_order, "p=q=1 mismatch");
      c.expect(node2vec::transition_weights(adj, std::nullopt, cur, 1.0, 1.0) == first_order, "start mismatch");
    }
  }

  const auto g = random_graph(rng, 10, 0.5, false);
  const graph::Adjacency adj(g, graph::NodeIndex::sorted(g));
  node2vec::Walker walker(adj, 0.5, 2.0);
  double worst = 0.0;
  for (int cur = 0; cur < adj.size(); ++cur) {
    const auto nb = adj.neighbors(cur);
    if (nb.size() < 2) continue;
    const int prev = nb[0];
    const auto exact = node2vec::transition_weights(adj, prev, cur, 0.5, 2.0);
    std::vector<double> freq(nb.size(), 0.0);
    const int steps = 100000;
    for (int i = 0; i < steps; ++i) {
      const int next = walker.step(prev, cur, rng);
      freq[std::find(nb.begin(), nb.end(), next) - nb.begin()] += 1.0;
    }
    for (std::size_t i = 0; i < nb.size(); ++i) worst = std::max(worst, std::abs(freq[i] / steps - exact[i]));
  }
  c.expect(worst <= 0.01, "Monte Carlo deviation " + std::to_string(worst));
  c.note << "max deviation " << worst << "; ";
}

// 5. Imputation oracle.
void imputation(Check& c) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto [g, t] = oracle::random_instance(5000 + s, 100, 0.3);
    c.expect(features::impute_missing(g, t, 5) == oracle::impute(g, t, 5), "instance " + std::to_string(s));
  }
}

// 6. Exhaustive macro-F1.
void macro_f1(Check& c) {
  long long cases = 0;
  for (int n = 1; n <= 6; ++n) {
    int total = 1;
    for (int i = 0; i < n; ++i) total *= 3;
    std::vector<int> t(n), p(n);
    for (int a = 0; a < total; ++a)
      for (int b = 0; b < total; ++b) {
        for (int i = 0, x = a, y = b; i < n; ++i, x /= 3, y /= 3) {
          t[i] = x % 3;
          p[i] = y % 3;
        }
        eval::ConfusionMatrix brute(3, std::vector<long long>(3, 0));
        for (int i = 0; i < n; ++i) ++brute[t[i]][p[i]];
        c.expect(eval::confusion(t, p, 3) == brute, "confusion matrix");
        const auto [num, den] = oracle::macro_f1_exact(t, p, 3);
        const double exact = static_cast<double>(num) / static_cast<double>(den);
        const double got = eval::macro_f1(t, p, 3);
        c.expect(std::abs(got - exact) <= 4 * std::numeric_limits<double>::epsilon(), "macro-F1 value");
        ++cases;
      }
  }
  c.note << cases << " cases; ";
}

// 7. End-to-end homophily recovery.
void homophily(Check& c) {
  const auto out = scratch("homophily");
  pipeline::Pipeline p(load_into(config_dir() / "acceptance.json", out));
  p.run_all(true);
  const auto f1 = mean_f1(read_json(p.out("evaluate/reports.json")));
  const double base = f1.at("majority-baseline");
  double best = 0.0;
  for (const char* ch : {"node2vec", "gcn", "sage"}) {
    const double v = f1.at(ch);
    best = std::max(best, v);
    c.note << ch << " " << v << ", ";
    c.expect(v >= 0.80, std::string(ch) + " below 0.80");
    c.expect(v - base >= 0.40, std::string(ch) + " within 0.40 of baseline");
  }
  const double fused = f1.at("late-fusion");
  c.note << "fusion " << fused << ", baseline " << base << "; ";
  c.expect(fused >= best - 0.02, "fusion below best channel - 0.02");
  c.expect(fused - base >= 0.40, "fusion within 0.40 of baseline");
  fs::remove_all(out);
}

// 8. Level-expansion ablation on a planted halo.
void levels(Check& c) {
  const auto out = scratch("levels");
  std::array<double, 3> mean{};
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s)
    for (int level = 0; level <= 2; ++level) {
      json j = read_json(config_dir() / "levels.json");
      j["seed"] = s + 1;
      j["graph"]["max_level"] = level;
      j["output_dir"] = (out / ("s" + std::to_string(s) + "-l" + std::to_string(level))).string();
      pipeline::Pipeline p(pipeline::parse_config(j, config_dir()));
      p.run_all(true);
      const auto train = read_json(p.out("train/node2vec.json"));
      mean[level] += train.at("report").at("mean_macro_f1").get<double>() / seeds;
    }
  c.note << "mean macro-F1 by level " << mean[0] << " / " << mean[1] << " / " << mean[2] << "; ";
  c.expect(mean[2] - mean[0] >= 0.05, "level 2 gains less than 5 points over level 0");
  c.expect(mean[1] >= mean[0] - 0.01 && mean[2] >= mean[1] - 0.01, "not monotone within 1 point");
  fs::remove_all(out);
}

// 9. Fusion arithmetic.
void fusion(Check& c) {
  Eigen::MatrixXd a(3, 3), b(3, 3);
  a << 1, 0, 0, 0.2, 0.3, 0.5, 0.25, 0.25, 0.5;
  b << 0, 1, 0, 0.6, 0.1, 0.3, 0.5, 0.5, 0.0;
  c.expect(classify::late_fuse({a, a, a}, classify::uniform_weights(3)) == a, "fixed point");
  c.expect(classify::late_fuse({a, b}, {1.0, 0.0}) == a, "degenerate weight on first");
  c.expect(classify::late_fuse({a, b}, {0.0, 1.0}) == b, "degenerate weight on second");
  const auto mix = classify::late_fuse({a, b}, {0.25, 0.75});
  for (Eigen::Index i = 0; i < 3; ++i)
    c.expect(std::abs(mix.row(i).sum() - 1.0) <= 4 * std::numeric_limits<double>::epsilon(), "row sum");

  Rng rng(5);
  const int n = 150;
  std::vector<int> labels(n);
  Eigen::MatrixXd perfect = Eigen::MatrixXd::Constant(n, 3, 0.1), noise(n, 3), weak(n, 3);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % 3;
    perfect(i, labels[i]) = 0.8;
    for (int k = 0; k < 3; ++k) {
      noise(i, k) = rng.uniform(0.01, 1.0);
      weak(i, k) = rng.uniform(0.01, 1.0) + (k == labels[i] ? 0.3 : 0.0);
    }
    noise.row(i) /= noise.row(i).sum();
    weak.row(i) /= weak.row(i).sum();
  }
  const auto w = classify::fit_fusion_weights({noise, perfect, weak}, labels, 3);
  c.note << "perfect channel weight " << w[1] << "; ";
  c.expect(w[1] >= 0.9, "perfect channel weight below 0.9");
}

// 10. Determinism of the end-to-end report.
void determinism(Check& c) {
  const auto out = scratch("determinism");
  std::vector<std::string> reports;
  for (const char* run : {"a", "b"}) {
    pipeline::Pipeline p(load_into(config_dir() / "demo.json", out / run));
    p.run_all(true);
    reports.push_back(pipeline::read_file(p.out("report/report.json")));
  }
  c.expect(!reports[0].empty() && reports[0] == reports[1], "report JSON differs between runs");
  fs::remove_all(out);
}

}  // namespace

int main() {
  log::threshold() = LogLevel::warn;
  struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<void(Check&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "majority baselines", 1, baselines},
      {2, "gradient checks", 10, gradients},
      {3, "normalized adjacency", 10, adjacency},
      {4, "node2vec bias rule", 30, walks},
      {5, "imputation oracle", 30, imputation},
      {6, "macro-F1 oracle", 30, macro_f1},
      {7, "homophily recovery", 600, homophily},
      {8, "level ablation", 600, levels},
      {9, "fusion arithmetic", 60, fusion},
      {10, "determinism", 600, determinism},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check c;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    c.expect(secs < cr.budget_s, "over time budget");
    if (!c.ok) ++failed;
    std::printf("criterion %2d %-22s %s  %.1fs  %s\n", cr.id, cr.title, c.ok ? "PASS" : "FAIL", secs,
                c.note.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
