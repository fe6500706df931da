#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alexafeat.hpp"
#include "common.hpp"
#include "evalkit.hpp"
#include "graphstore.hpp"

namespace mediaprof::synth {

/// Missingness defaults in feature order (rank, sites, bounce, pageviews,
/// time): complements of the metric availability rates of real sites.
inline constexpr std::array<double, features::kMetricCount> kDefaultMissingness{
    0.0008, 0.0502, 0.6891, 0.3892, 0.6373};

struct SynthConfig {
  int n_nodes = 1000;
  int classes = 3;
  double p_in = 0.05;
  double p_out = 0.002;
  bool homophilous = true;
  std::vector<double> class_shift;  // empty: evenly spaced in [-1, 1]
  std::array<double, features::kMetricCount> missingness = kDefaultMissingness;
  double label_fraction = 0.6;
  double score_min = 10.0;
  double score_max = 60.0;
  std::uint64_t seed = 0;

  double shift(int k) const {
    if (!class_shift.empty()) return class_shift.at(static_cast<std::size_t>(k));
    return classes == 1 ? 0.0 : -1.0 + 2.0 * k / (classes - 1);
  }

  void validate() const {
    if (n_nodes < 1) throw Error("synth: n_nodes must be positive");
    if (classes < 1 || classes > 3) throw Error("synth: classes must be in [1, 3]");
    if (!(p_in >= 0 && p_in <= 1 && p_out >= 0 && p_out <= 1))
      throw Error("synth: edge probabilities must lie in [0, 1]");
    if (homophilous && !(p_in > p_out)) throw Error("synth: homophilous regime needs p_in > p_out");
    if (!class_shift.empty() && static_cast<int>(class_shift.size()) != classes)
      throw Error("synth: class_shift needs one entry per class");
    for (double r : missingness)
      if (!(r >= 0 && r <= 1)) throw Error("synth: missingness rates must lie in [0, 1]");
    if (!(label_fraction >= 0 && label_fraction <= 1)) throw Error("synth: label_fraction must lie in [0, 1]");
    if (!(score_min > 0 && score_max >= score_min)) throw Error("synth: invalid score range");
  }
};

/// Raw metric cells as they appear in features.csv; nullopt = empty cell.
struct RawMetrics {
  std::optional<long long> rank;
  std::optional<double> sites_linking_in;
  std::optional<double> bounce_rate;
  std::optional<double> daily_pageviews;
  std::optional<std::string> daily_time;
};

struct SynthData {
  std::vector<std::string> domains;
  std::vector<int> block;
  std::vector<bool> labeled;
  std::vector<graph::OverlapEdge> edges;  // planted, a < b
  std::vector<RawMetrics> metrics;
  /// Targets listed ahead of the score order in a node's record (halo attachments).
  std::map<std::string, std::vector<std::string>> priority;

  std::size_t size() const { return domains.size(); }

  std::vector<std::string> labeled_domains() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (labeled[i]) out.push_back(domains[i]);
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline std::string node_domain(char prefix, int i, int n) {
  std::string digits = std::to_string(i);
  const auto width = std::to_string(std::max(n - 1, 0)).size();
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return std::string(1, prefix) + digits + ".example";
}

inline std::string format_time_on_site(long long seconds) {
  const long long h = seconds / 3600, m = (seconds / 60) % 60, s = seconds % 60;
  char buf[32];
  if (h > 0)
    std::snprintf(buf, sizeof buf, "%lld:%02lld:%02lld", h, m, s);
  else
    std::snprintf(buf, sizeof buf, "%lld:%02lld", m, s);
  return buf;
}

inline double round_to(double v, double step) { return std::round(v / step) * step; }

/// Class-shifted metric draw followed by masking.
inline RawMetrics draw_metrics(double s, const std::array<double, features::kMetricCount>& missing,
                               Rng& values, Rng& mask) {
  RawMetrics m;
  const double log_rank = std::max(0.0, values.normal(5.0 - 0.8 * s, 0.6));
  const double sites = std::round(std::exp(values.normal(6.0 + 0.8 * s, 0.6)));
  const double a = std::max(0.5, 5.0 - 2.0 * s), b = std::max(0.5, 5.0 + 2.0 * s);
  const double bounce = round_to(100.0 * values.beta(a, b), 0.1);
  const double pageviews = round_to(std::exp(values.normal(1.0 + 0.3 * s, 0.3)), 0.01);
  const double seconds = std::round(std::exp(values.normal(5.0 + 0.4 * s, 0.4)));
  std::array<bool, features::kMetricCount> drop{};
  for (int k = 0; k < features::kMetricCount; ++k) drop[k] = mask.bernoulli(missing[k]);
  using features::Metric;
  if (!drop[static_cast<int>(Metric::rank_log)])
    m.rank = std::max(1LL, std::llround(std::pow(10.0, log_rank)));
  if (!drop[static_cast<int>(Metric::sites_linking_in)]) m.sites_linking_in = sites;
  if (!drop[static_cast<int>(Metric::bounce_rate)]) m.bounce_rate = std::min(100.0, bounce);
  if (!drop[static_cast<int>(Metric::daily_pageviews)]) m.daily_pageviews = pageviews;
  if (!drop[static_cast<int>(Metric::daily_time)])
    m.daily_time = format_time_on_site(static_cast<long long>(seconds));
  return m;
}

/// Planted-partition graph with class = block (node i in block i mod classes).
inline SynthData generate(const SynthConfig& c) {
  c.validate();
  SynthData d;
  const int n = c.n_nodes;
  for (int i = 0; i < n; ++i) {
    d.domains.push_back(node_domain('m', i, n));
    d.block.push_back(i % c.classes);
  }

  Rng edges(derive_seed(c.seed, "edges"));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double p = d.block[i] == d.block[j] ? c.p_in : c.p_out;
      if (p > 0.0 && edges.bernoulli(p))
        d.edges.push_back({d.domains[i], d.domains[j], round_to(edges.uniform(c.score_min, c.score_max), 0.1)});
    }

  Rng values(derive_seed(c.seed, "metrics")), mask(derive_seed(c.seed, "missingness"));
  for (int i = 0; i < n; ++i) d.metrics.push_back(draw_metrics(c.shift(d.block[i]), c.missingness, values, mask));

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng labels(derive_seed(c.seed, "labels"));
  labels.shuffle(order);
  const auto n_labeled = static_cast<std::size_t>(std::llround(c.label_fraction * n));
  d.labeled.assign(static_cast<std::size_t>(n), false);
  for (std::size_t k = 0; k < n_labeled; ++k) d.labeled[static_cast<std::size_t>(order[k])] = true;
  return d;
}

/// Per-block rings of unlabeled nodes, round(halo_factor * labeled) in total.
/// Every halo node hangs off a labeled anchor of its block, which lists it
/// first in its record, and joins its block's ring. With halo_factor <= 5 every
/// halo node is a listed target of its anchor, so replay from the labeled seeds
/// reaches all of them in the first query round; larger factors rely on the rings.
inline SynthData plant_unlabeled_halo(SynthData d, double halo_factor, std::uint64_t seed,
                                      const SynthConfig& c = {}) {
  if (!(halo_factor >= 0)) throw Error("halo_factor must be nonnegative");
  const auto labeled = d.labeled_domains();
  const auto total = static_cast<int>(std::llround(halo_factor * static_cast<double>(labeled.size())));
  if (total == 0) return d;

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < d.size(); ++i) index.emplace(d.domains[i], i);
  std::map<int, std::vector<std::size_t>> anchors;
  for (const auto& dom : labeled) anchors[d.block[index.at(dom)]].push_back(index.at(dom));
  if (anchors.empty()) throw Error("plant_unlabeled_halo: no labeled nodes");
  std::vector<int> blocks;
  for (const auto& [b, v] : anchors) blocks.push_back(b);

  Rng rng(derive_seed(seed, "halo"));
  Rng values(derive_seed(seed, "halo-metrics")), mask(derive_seed(seed, "halo-missingness"));
  std::map<int, std::vector<std::size_t>> ring;
  for (int h = 0; h < total; ++h) {
    const int b = blocks[static_cast<std::size_t>(h) % blocks.size()];
    auto& pool = anchors[b];
    const std::size_t anchor = pool[ring[b].size() % pool.size()];
    const std::size_t id = d.size();
    d.domains.push_back(node_domain('h', h, total));
    d.block.push_back(b);
    d.labeled.push_back(false);
    d.metrics.push_back(draw_metrics(c.shift(b), c.missingness, values, mask));
    const auto& a = d.domains[anchor];
    const auto& self = d.domains[id];
    d.edges.push_back({std::min(a, self), std::max(a, self), round_to(rng.uniform(c.score_min, c.score_max), 0.1)});
    d.priority[a].push_back(self);
    ring[b].push_back(id);
  }
  for (auto& [b, members] : ring) {
    rng.shuffle(members);
    if (members.size() < 2) continue;
    const std::size_t m = members.size();
    for (std::size_t k = 0; k < (m == 2 ? 1 : m); ++k) {
      const auto& x = d.domains[members[k]];
      const auto& y = d.domains[members[(k + 1) % m]];
      d.edges.push_back({std::min(x, y), std::max(x, y), round_to(rng.uniform(c.score_min, c.score_max), 0.1)});
    }
  }
  return d;
}

/// Overlap record of every node: priority targets first, then neighbors by
/// descending score (ties by domain), truncated to five.
inline std::vector<graph::OverlapRecord> make_records(const SynthData& d) {
  std::map<std::string, std::vector<graph::OverlapTarget>> adj;
  for (const auto& e : d.edges) {
    adj[e.a].push_back({e.b, e.score});
    adj[e.b].push_back({e.a, e.score});
  }
  std::vector<graph::OverlapRecord> out;
  for (const auto& dom : d.domains) {
    graph::OverlapRecord r{dom, {}};
    auto& nb = adj[dom];
    std::sort(nb.begin(), nb.end(), [](const auto& x, const auto& y) {
      if (x.score != y.score) return x.score > y.score;
      return x.domain < y.domain;
    });
    std::vector<std::string> first;
    if (auto it = d.priority.find(dom); it != d.priority.end()) first = it->second;
    for (const auto& p : first) {
      if (r.targets.size() == graph::kMaxTargets) break;
      for (const auto& t : nb)
        if (t.domain == p) r.targets.push_back(t);
    }
    for (const auto& t : nb) {
      if (r.targets.size() == graph::kMaxTargets) break;
      if (std::find(first.begin(), first.end(), t.domain) == first.end()) r.targets.push_back(t);
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// The synthgen-backed record source.
inline graph::MapRecordSource record_source(const SynthData& d) {
  return graph::MapRecordSource(make_records(d));
}

inline void write_records(const SynthData& d, std::ostream& out) {
  for (const auto& r : make_records(d)) out << graph::record_to_json_line(r) << '\n';
}

inline void write_features(const SynthData& d, std::ostream& out) {
  out << "domain,rank,sites_linking_in,bounce_rate,daily_pageviews,daily_time\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& m = d.metrics[i];
    out << d.domains[i] << ',';
    if (m.rank) out << *m.rank;
    out << ',';
    if (m.sites_linking_in) out << format_double(*m.sites_linking_in);
    out << ',';
    if (m.bounce_rate) out << format_double(*m.bounce_rate);
    out << ',';
    if (m.daily_pageviews) out << format_double(*m.daily_pageviews);
    out << ',';
    if (m.daily_time) out << *m.daily_time;
    out << '\n';
  }
}

/// labels.csv: factuality follows the block; bias mirrors it. Unlabeled rows are blank.
inline void write_labels(const SynthData& d, std::ostream& out) {
  const auto fact = eval::factuality_task(), bias = eval::bias_task();
  out << "domain,factuality,bias\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.domains[i] << ',';
    if (d.labeled[i])
      out << fact.classes[static_cast<std::size_t>(d.block[i])] << ',' << bias.classes[static_cast<std::size_t>(d.block[i])];
    else
      out << ',';
    out << '\n';
  }
}

inline void write_seeds(const SynthData& d, std::ostream& out) {
  for (const auto& dom : d.labeled_domains()) out << dom << '\n';
}

struct SynthFiles {
  std::string records = "records.jsonl";
  std::string features = "features.csv";
  std::string labels = "labels.csv";
  std::string seeds = "seeds.txt";
};

/// Writes the four fixture files into `dir`; returns their paths.
inline std::vector<std::string> write_fixture(const SynthData& d, const std::string& dir,
                                              const SynthFiles& names = {}) {
  std::filesystem::create_directories(dir);
  const auto path = [&](const std::string& f) { return (std::filesystem::path(dir) / f).string(); };
  std::vector<std::string> written{path(names.records), path(names.features), path(names.labels), path(names.seeds)};
  {
    auto o = open_output(written[0]);
    write_records(d, o);
  }
  {
    auto o = open_output(written[1]);
    write_features(d, o);
  }
  {
    auto o = open_output(written[2]);
    write_labels(d, o);
  }
  {
    auto o = open_output(written[3]);
    write_seeds(d, o);
  }
  return written;
}

/// Expected share of intra-block edges under the block model.
inline double expected_intra_fraction(const SynthConfig& c) {
  std::vector<double> size(static_cast<std::size_t>(c.classes), 0.0);
  for (int i = 0; i < c.n_nodes; ++i) size[static_cast<std::size_t>(i % c.classes)] += 1.0;
  double e_in = 0.0, e_out = 0.0;
  for (std::size_t a = 0; a < size.size(); ++a) {
    e_in += size[a] * (size[a] - 1.0) / 2.0;
    for (std::size_t b = a + 1; b < size.size(); ++b) e_out += size[a] * size[b];
  }
  const double in = c.p_in * e_in, out = c.p_out * e_out;
  return in + out == 0.0 ? 0.0 : in / (in + out);
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_nodes", c.n_nodes},     {"classes", c.classes},
          {"p_in", c.p_in},           {"p_out", c.p_out},
          {"homophilous", c.homophilous}, {"class_shift", c.class_shift},
          {"missingness", c.missingness}, {"label_fraction", c.label_fraction},
          {"seed", c.seed}};
}

}  // namespace mediaprof::synth
