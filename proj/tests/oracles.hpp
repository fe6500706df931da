#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. They are deliberately naive and share no code with the
// library beyond its data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "mediaprof/alexafeat.hpp"
#include "mediaprof/common.hpp"
#include "mediaprof/graphstore.hpp"

namespace oracle {

using mediaprof::features::FeatureTable;
using mediaprof::features::kMetricCount;

/// k-NN mean imputation using Floyd-Warshall hop distances.
inline FeatureTable impute(const mediaprof::graph::MediaGraph& g, const FeatureTable& table, int k) {
  const auto domains = g.domains();
  const int n = static_cast<int>(domains.size());
  constexpr int inf = std::numeric_limits<int>::max() / 4;
  std::vector<std::vector<int>> dist(n, std::vector<int>(n, inf));
  std::vector<std::vector<double>> score(n, std::vector<double>(n, 0.0));
  std::map<std::string, int> id;
  for (int i = 0; i < n; ++i) id[domains[i]] = i;
  for (int i = 0; i < n; ++i) dist[i][i] = 0;
  for (const auto& e : g.edges()) {
    const int a = id[e.a], b = id[e.b];
    dist[a][b] = dist[b][a] = 1;
    score[a][b] = score[b][a] = e.score;
  }
  for (int m = 0; m < n; ++m)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (dist[i][m] + dist[m][j] < dist[i][j]) dist[i][j] = dist[i][m] + dist[m][j];

  std::array<double, kMetricCount> global{};
  for (int m = 0; m < kMetricCount; ++m) {
    double s = 0;
    int c = 0;
    for (const auto& d : domains)
      if (!table.at(d).missing[m]) {
        s += table.at(d).values[m];
        ++c;
      }
    global[m] = c ? s / c : 0.0;
  }

  FeatureTable out = table;
  for (int v = 0; v < n; ++v) {
    // Candidates ordered by (distance, strongest edge into the previous shell desc, domain).
    std::vector<std::tuple<int, double, std::string, int>> cand;
    for (int u = 0; u < n; ++u) {
      if (u == v || dist[v][u] >= inf) continue;
      double key = 0.0;
      for (int w = 0; w < n; ++w)
        if (dist[u][w] == 1 && dist[v][w] == dist[v][u] - 1) key = std::max(key, score[u][w]);
      cand.emplace_back(dist[v][u], -key, domains[u], u);
    }
    std::sort(cand.begin(), cand.end());
    for (int m = 0; m < kMetricCount; ++m) {
      if (!table.at(domains[v]).missing[m]) continue;
      double s = 0;
      int c = 0;
      for (const auto& [d, key, name, u] : cand) {
        if (c == k) break;
        if (table.at(domains[u]).missing[m]) continue;
        s += table.at(domains[u]).values[m];
        ++c;
      }
      auto& f = out.at(domains[v]);
      f.values[m] = c ? s / c : global[m];
      f.missing[m] = false;
    }
  }
  return out;
}

/// Macro-F1 straight from the definition: per class P and R, F1 = 2PR/(P+R), 0 if P+R = 0.
inline double macro_f1(const std::vector<int>& t, const std::vector<int>& p, int classes) {
  double total = 0;
  for (int c = 0; c < classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (p[i] == c && t[i] == c) ++tp;
      if (p[i] == c && t[i] != c) ++fp;
      if (p[i] != c && t[i] == c) ++fn;
    }
    const double prec = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double rec = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    total += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return total / classes;
}

/// Exact rational macro-F1 as (numerator, denominator), reduced.
inline std::pair<long long, long long> macro_f1_exact(const std::vector<int>& t, const std::vector<int>& p,
                                                      int classes) {
  long long num = 0, den = 1;
  for (int c = 0; c < classes; ++c) {
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += p[i] == c && t[i] == c;
      fp += p[i] == c && t[i] != c;
      fn += p[i] != c && t[i] == c;
    }
    if (tp == 0) continue;  // P = 0 or R = 0 gives F1 = 0 whenever defined
    // P = tp/(tp+fp), R = tp/(tp+fn); 2PR/(P+R) with both as fractions.
    const long long pn = tp, pd = tp + fp, rn = tp, rd = tp + fn;
    long long fn_num = 2 * pn * rn, fn_den = pn * rd + rn * pd;
    const long long g = std::gcd(fn_num, fn_den);
    fn_num /= g;
    fn_den /= g;
    num = num * fn_den + fn_num * den;
    den *= fn_den;
    const long long h = std::gcd(num, den);
    num /= h;
    den /= h;
  }
  den *= classes;
  const long long h = std::gcd(num, den);
  return {num / h, den / h};
}

/// Random connected-or-not graph with planted missingness for the imputation oracle.
inline std::pair<mediaprof::graph::MediaGraph, FeatureTable> random_instance(std::uint64_t seed, int max_nodes,
                                                                             double missing_rate) {
  mediaprof::Rng rng(seed);
  const int n = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_nodes - 1)));
  const double p = rng.uniform(0.5, 3.0) / n;
  mediaprof::graph::MediaGraph g;
  std::vector<std::string> d;
  for (int i = 0; i < n; ++i) {
    d.push_back("n" + std::to_string(i) + ".org");
    g.add_node(d.back(), i == 0 ? 0 : 1, i == 0);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(p)) g.add_edge(d[i], d[j], static_cast<double>(1 + rng.below(4)));  // ties on purpose
  FeatureTable t;
  for (int i = 0; i < n; ++i) {
    mediaprof::features::NodeFeatures f;
    for (int m = 0; m < kMetricCount; ++m)
      if (!rng.bernoulli(missing_rate)) f.set(static_cast<mediaprof::features::Metric>(m), rng.uniform(0, 100));
    t.emplace(d[i], f);
  }
  return {g, t};
}

}  // namespace oracle
