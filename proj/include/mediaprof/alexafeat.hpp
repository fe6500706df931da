#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "graphstore.hpp"

namespace mediaprof::features {

/// Scalar engagement metrics, in feature-vector order.
enum class Metric : int {
  rank_log = 0,
  sites_linking_in = 1,
  bounce_rate = 2,
  daily_pageviews = 3,
  daily_time = 4,
};

inline constexpr int kMetricCount = 5;
inline constexpr int kFlagCount = 4;
inline constexpr int kFeatureDim = kMetricCount + kFlagCount;

inline constexpr std::array<std::string_view, kFeatureDim> kFeatureNames{
    "rank_log",         "sites_linking_in",    "bounce_rate",
    "daily_pageviews",  "daily_time_s",        "has_sites_linking_in",
    "has_bounce_rate",  "has_daily_time",      "has_daily_pageviews"};

/// Metrics whose availability is itself a feature, in flag order.
inline constexpr std::array<Metric, kFlagCount> kFlaggedMetrics{
    Metric::sites_linking_in, Metric::bounce_rate, Metric::daily_time, Metric::daily_pageviews};

struct NodeFeatures {
  std::array<double, kMetricCount> values{};
  /// Whether the raw source supplied the metric. Never changed by imputation.
  std::array<bool, kMetricCount> present{};
  /// Whether the value is still unknown. Cleared by imputation.
  std::array<bool, kMetricCount> missing{true, true, true, true, true};

  double value(Metric m) const { return values[static_cast<int>(m)]; }
  bool has(Metric m) const { return present[static_cast<int>(m)]; }

  void set(Metric m, double v) {
    const auto i = static_cast<int>(m);
    values[i] = v;
    present[i] = true;
    missing[i] = false;
  }

  friend bool operator==(const NodeFeatures&, const NodeFeatures&) = default;
};

using FeatureTable = std::map<std::string, NodeFeatures>;

inline double log_scale_rank(long long rank) {
  if (rank < 1) throw Error("traffic rank must be >= 1, got " + std::to_string(rank));
  return std::log10(static_cast<double>(rank));
}

/// "M:SS" or "H:MM:SS" to seconds.
inline double parse_time_on_site(std::string_view text) {
  text = trim(text);
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ':') {
      parts.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  if (parts.size() != 2 && parts.size() != 3)
    throw ParseError("time on site must be M:SS or H:MM:SS, got '" + std::string(text) + "'");
  auto number = [&](std::string_view p, bool two_digits) {
    if (p.empty() || (two_digits && p.size() != 2))
      throw ParseError("malformed time on site '" + std::string(text) + "'");
    for (char c : p)
      if (c < '0' || c > '9') throw ParseError("malformed time on site '" + std::string(text) + "'");
    return static_cast<double>(parse_int(p));
  };
  const bool hms = parts.size() == 3;
  const double hours = hms ? number(parts[0], false) : 0.0;
  const double minutes = number(parts[hms ? 1 : 0], hms);
  const double seconds = number(parts.back(), true);
  if (seconds >= 60.0 || (hms && minutes >= 60.0))
    throw ParseError("time on site field out of range in '" + std::string(text) + "'");
  return hours * 3600.0 + minutes * 60.0 + seconds;
}

/// Availability flags: sites linking in, bounce rate, daily time, daily pageviews.
inline std::array<int, kFlagCount> binarize(const NodeFeatures& f) {
  std::array<int, kFlagCount> flags{};
  for (int i = 0; i < kFlagCount; ++i) flags[i] = f.has(kFlaggedMetrics[i]) ? 1 : 0;
  return flags;
}

inline std::array<double, kFeatureDim> feature_vector(const NodeFeatures& f) {
  std::array<double, kFeatureDim> v{};
  for (int i = 0; i < kMetricCount; ++i) v[i] = f.values[i];
  const auto flags = binarize(f);
  for (int i = 0; i < kFlagCount; ++i) v[kMetricCount + i] = flags[i];
  return v;
}

// ---------------------------------------------------------------------------
// Raw features.csv: domain, rank, sites_linking_in, bounce_rate,
// daily_pageviews, daily_time. Empty cell = missing.

inline FeatureTable read_raw_features(std::istream& in, const std::string& what = "features.csv") {
  const auto t = read_csv(in, what);
  const std::array<std::string_view, 6> cols{"domain",          "rank",         "sites_linking_in",
                                             "bounce_rate",     "daily_pageviews", "daily_time"};
  std::array<int, 6> idx{};
  for (std::size_t i = 0; i < cols.size(); ++i) {
    idx[i] = t.column(cols[i]);
    if (idx[i] < 0) throw ParseError(what + ": missing column " + std::string(cols[i]));
  }
  FeatureTable table;
  for (const auto& row : t.rows) {
    const auto domain = graph::normalize_domain(row[idx[0]]);
    NodeFeatures f;
    auto cell = [&](int c) { return trim(row[idx[c]]); };
    auto attempt = [&](Metric m, int c, auto&& convert) {
      const auto s = cell(c);
      if (s.empty()) return;
      try {
        f.set(m, convert(s));
      } catch (const std::exception& e) {
        log::warn(what + ": " + domain + ": " + std::string(cols[c]) + " treated as missing (" +
                  e.what() + ")");
      }
    };
    attempt(Metric::rank_log, 1, [](std::string_view s) {
      const double r = parse_double(s);
      if (r != std::floor(r)) throw ParseError("rank is not an integer");
      return log_scale_rank(static_cast<long long>(r));
    });
    attempt(Metric::sites_linking_in, 2, [](std::string_view s) {
      const double v = parse_double(s);
      if (v < 0) throw ParseError("negative count");
      return v;
    });
    attempt(Metric::bounce_rate, 3, [](std::string_view s) {
      if (!s.empty() && s.back() == '%') s.remove_suffix(1);
      const double v = parse_double(s);
      if (v < 0 || v > 100) throw ParseError("bounce rate outside [0, 100]");
      return v;
    });
    attempt(Metric::daily_pageviews, 4, [](std::string_view s) {
      const double v = parse_double(s);
      if (v < 0) throw ParseError("negative pageviews");
      return v;
    });
    attempt(Metric::daily_time, 5, [](std::string_view s) { return parse_time_on_site(s); });
    if (!table.emplace(domain, f).second) throw ParseError(what + ": duplicate domain " + domain);
  }
  return table;
}

inline FeatureTable read_raw_features_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_raw_features(in, path);
}

/// Restricts the table to the graph's nodes; nodes without a row get an
/// all-missing row.
inline FeatureTable align_to_graph(const graph::MediaGraph& g, const FeatureTable& table) {
  FeatureTable out;
  std::size_t absent = 0;
  for (const auto& d : g.domains()) {
    auto it = table.find(d);
    if (it == table.end()) {
      ++absent;
      out.emplace(d, NodeFeatures{});
    } else {
      out.emplace(d, it->second);
    }
  }
  if (absent) log::info(std::to_string(absent) + " graph nodes have no metric row");
  if (const auto dropped = table.size() + absent - out.size())
    log::info(std::to_string(dropped) + " metric rows are not graph nodes and were dropped");
  return out;
}

/// Fills each missing metric with the mean of that metric over the k nearest
/// graph neighbors (unweighted hop distance) that have it present. Within a
/// hop distance, candidates are ranked by their strongest edge into the
/// previous BFS layer (descending), then by domain. Falls back to the global
/// mean when the component has no donor. Reads pre-imputation values only.
inline FeatureTable impute_missing(const graph::MediaGraph& g, const FeatureTable& table,
                                   int k = 5) {
  if (k < 1) throw Error("impute_missing: k must be >= 1");
  if (table.size() != g.node_count()) throw Error("impute_missing: table does not cover the graph");
  const auto order = graph::NodeIndex::sorted(g);
  const graph::Adjacency adj(g, order, true);
  const int n = order.size();

  std::vector<const NodeFeatures*> rows(n);
  for (int v = 0; v < n; ++v) {
    auto it = table.find(order.domain(v));
    if (it == table.end()) throw Error("impute_missing: no features for " + order.domain(v));
    rows[v] = &it->second;
  }

  std::array<double, kMetricCount> global_mean{};
  for (int m = 0; m < kMetricCount; ++m) {
    double sum = 0.0;
    std::size_t count = 0;
    for (int v = 0; v < n; ++v)
      if (!rows[v]->missing[m]) {
        sum += rows[v]->values[m];
        ++count;
      }
    global_mean[m] = count ? sum / static_cast<double>(count) : 0.0;
  }

  FeatureTable out = table;
  std::vector<int> stamp(n, -1);
  std::vector<int> layer, next;
  std::vector<std::pair<double, int>> ranked;

  for (int v = 0; v < n; ++v) {
    const NodeFeatures& src = *rows[v];
    std::array<bool, kMetricCount> need{};
    bool any = false;
    for (int m = 0; m < kMetricCount; ++m) any |= (need[m] = src.missing[m]);
    if (!any) continue;

    std::array<double, kMetricCount> sum{};
    std::array<int, kMetricCount> count{};
    auto satisfied = [&] {
      for (int m = 0; m < kMetricCount; ++m)
        if (need[m] && count[m] < k) return false;
      return true;
    };

    stamp[v] = v;
    layer.assign(1, v);
    while (!layer.empty() && !satisfied()) {
      // Candidates one hop further, keyed by their strongest edge into `layer`.
      ranked.clear();
      for (int u : layer) {
        auto nb = adj.neighbors(u);
        auto wt = adj.weights(u);
        for (std::size_t e = 0; e < nb.size(); ++e) {
          const int x = nb[e];
          if (stamp[x] == v) continue;
          ranked.emplace_back(wt[e], x);
        }
      }
      std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        return a.first > b.first;
      });
      next.clear();
      std::vector<std::pair<double, int>> best;
      for (std::size_t i = 0; i < ranked.size(); ++i)
        if (i == 0 || ranked[i].second != ranked[i - 1].second) best.push_back(ranked[i]);
      std::sort(best.begin(), best.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return order.domain(a.second) < order.domain(b.second);
      });
      for (const auto& [w, x] : best) {
        stamp[x] = v;
        next.push_back(x);
        for (int m = 0; m < kMetricCount; ++m) {
          if (!need[m] || count[m] >= k || rows[x]->missing[m]) continue;
          sum[m] += rows[x]->values[m];
          ++count[m];
        }
      }
      layer.swap(next);
    }

    NodeFeatures& dst = out.at(order.domain(v));
    for (int m = 0; m < kMetricCount; ++m) {
      if (!need[m]) continue;
      if (count[m] > 0) {
        dst.values[m] = sum[m] / static_cast<double>(count[m]);
      } else {
        dst.values[m] = global_mean[m];
        log::debug(order.domain(v) + ": no donor for " + std::string(kFeatureNames[m]) +
                   " in its component, using global mean");
      }
      dst.missing[m] = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Processed table: domain + the nine feature-vector columns.

inline void write_feature_table(const FeatureTable& table, std::ostream& out) {
  out << "domain";
  for (auto name : kFeatureNames) out << ',' << name;
  out << '\n';
  for (const auto& [d, f] : table) {
    out << d;
    for (double x : feature_vector(f)) out << ',' << format_double(x);
    out << '\n';
  }
}

/// Inverse of write_feature_table for imputed tables (nothing missing).
inline FeatureTable read_feature_table(std::istream& in, const std::string& what = "features") {
  const auto t = read_csv(in, what);
  if (t.header.size() != 1 + kFeatureDim || t.header[0] != "domain")
    throw ParseError(what + ": expected domain + " + std::to_string(kFeatureDim) + " columns");
  FeatureTable table;
  for (const auto& row : t.rows) {
    NodeFeatures f;
    for (int m = 0; m < kMetricCount; ++m) {
      f.values[m] = parse_double(row[1 + m]);
      f.missing[m] = false;
    }
    f.present[static_cast<int>(Metric::rank_log)] = true;
    for (int i = 0; i < kFlagCount; ++i)
      f.present[static_cast<int>(kFlaggedMetrics[i])] = parse_double(row[1 + kMetricCount + i]) != 0.0;
    table.emplace(row[0], f);
  }
  return table;
}

}  // namespace mediaprof::features
