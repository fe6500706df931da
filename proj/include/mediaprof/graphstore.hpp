#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace mediaprof::graph {

/// Lowercase hostname with scheme, userinfo, port, path, query, fragment and a
/// leading "www." removed. Idempotent.
inline std::string normalize_domain(std::string_view raw) {
  std::string s(trim(raw));
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (auto p = s.find("://"); p != std::string::npos) s.erase(0, p + 3);
  if (auto p = s.find_first_of("/?#"); p != std::string::npos) s.erase(p);
  if (auto p = s.rfind('@'); p != std::string::npos) s.erase(0, p + 1);
  if (auto p = s.find(':'); p != std::string::npos) s.erase(p);
  while (!s.empty() && s.back() == '.') s.pop_back();
  if (s.rfind("www.", 0) == 0) s.erase(0, 4);

  if (s.empty()) throw ParseError("no hostname in '" + std::string(raw) + "'");
  std::size_t label = 0;
  for (char c : s) {
    if (c == '.') {
      if (label == 0) throw ParseError("empty label in hostname '" + std::string(raw) + "'");
      label = 0;
      continue;
    }
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'))
      throw ParseError("invalid hostname character in '" + std::string(raw) + "'");
    ++label;
  }
  if (label == 0) throw ParseError("empty label in hostname '" + std::string(raw) + "'");
  return s;
}

struct DomainNode {
  std::string domain;
  int level = 0;
  bool is_seed = false;

  friend bool operator==(const DomainNode&, const DomainNode&) = default;
};

/// Undirected edge; `a < b` lexicographically.
struct OverlapEdge {
  std::string a;
  std::string b;
  double score = 0.0;

  friend bool operator==(const OverlapEdge&, const OverlapEdge&) = default;
};

struct OverlapTarget {
  std::string domain;
  double score = 0.0;
};

inline constexpr std::size_t kMaxTargets = 5;

struct OverlapRecord {
  std::string source;
  std::vector<OverlapTarget> targets;
};

class MediaGraph {
 public:
  struct NodeState {
    int level = 0;
    bool is_seed = false;
    bool queried = false;
  };

  /// Inserts a node if absent. An existing node keeps its level (first discovery wins).
  bool add_node(const std::string& domain, int level, bool is_seed) {
    if (level < 0) throw Error("negative node level for " + domain);
    if (is_seed != (level == 0)) throw Error("level 0 is reserved for seeds: " + domain);
    auto [it, inserted] = nodes_.try_emplace(domain, NodeState{level, is_seed, false});
    return inserted;
  }

  /// Adds or merges an undirected edge. Repeated pairs keep the maximum score.
  bool add_edge(const std::string& u, const std::string& v, double score) {
    if (u == v) throw Error("self-loop on " + u);
    if (!(score > 0.0)) throw Error("edge score must be positive: " + u + " -- " + v);
    if (!nodes_.contains(u) || !nodes_.contains(v))
      throw Error("edge endpoint missing: " + u + " -- " + v);
    auto key = u < v ? std::pair{u, v} : std::pair{v, u};
    auto [it, inserted] = edges_.try_emplace(std::move(key), score);
    if (!inserted) it->second = std::max(it->second, score);
    return inserted;
  }

  void mark_queried(const std::string& domain) { nodes_.at(domain).queried = true; }

  bool contains(const std::string& domain) const { return nodes_.contains(domain); }
  const NodeState& node(const std::string& domain) const { return nodes_.at(domain); }

  std::optional<double> edge_score(const std::string& u, const std::string& v) const {
    auto it = edges_.find(u < v ? std::pair{u, v} : std::pair{v, u});
    if (it == edges_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  int max_level() const { return max_level_; }
  void set_max_level(int k) { max_level_ = k; }

  std::vector<DomainNode> nodes() const {
    std::vector<DomainNode> out;
    out.reserve(nodes_.size());
    for (const auto& [d, s] : nodes_) out.push_back({d, s.level, s.is_seed});
    return out;
  }

  std::vector<OverlapEdge> edges() const {
    std::vector<OverlapEdge> out;
    out.reserve(edges_.size());
    for (const auto& [k, w] : edges_) out.push_back({k.first, k.second, w});
    return out;
  }

  /// Domains in lexicographic order.
  std::vector<std::string> domains() const {
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (const auto& [d, s] : nodes_) out.push_back(d);
    return out;
  }

  const std::map<std::string, NodeState>& node_states() const { return nodes_; }
  const std::map<std::pair<std::string, std::string>, double>& edge_map() const {
    return edges_;
  }

  /// Equality under (nodes, edges, levels); query bookkeeping is ignored.
  friend bool operator==(const MediaGraph& x, const MediaGraph& y) {
    return x.nodes() == y.nodes() && x.edges_ == y.edges_;
  }

 private:
  std::map<std::string, NodeState> nodes_;
  std::map<std::pair<std::string, std::string>, double> edges_;
  int max_level_ = 0;
};

// ---------------------------------------------------------------------------
// Record sources

class RecordSource {
 public:
  virtual ~RecordSource() = default;
  virtual std::optional<OverlapRecord> fetch(const std::string& domain) const = 0;
};

/// In-memory records keyed by normalized source domain.
class MapRecordSource : public RecordSource {
 public:
  MapRecordSource() = default;
  explicit MapRecordSource(const std::vector<OverlapRecord>& records) {
    for (const auto& r : records) add(r);
  }

  void add(OverlapRecord r) {
    r.source = normalize_domain(r.source);
    for (auto& t : r.targets) t.domain = normalize_domain(t.domain);
    auto& slot = records_[r.source];
    slot.source = r.source;
    for (auto& t : r.targets) slot.targets.push_back(std::move(t));
    if (slot.targets.size() > kMaxTargets)
      throw ParseError("record for " + r.source + " lists more than " +
                       std::to_string(kMaxTargets) + " targets");
  }

  std::optional<OverlapRecord> fetch(const std::string& domain) const override {
    auto it = records_.find(domain);
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return records_.size(); }
  const std::map<std::string, OverlapRecord>& records() const { return records_; }

 private:
  std::map<std::string, OverlapRecord> records_;
};

inline OverlapRecord parse_record_line(std::string_view line) {
  auto j = nlohmann::json::parse(line);
  OverlapRecord r;
  r.source = j.at("source").get<std::string>();
  for (const auto& t : j.at("targets")) {
    OverlapTarget target{t.at("domain").get<std::string>(), t.at("score").get<double>()};
    if (target.score < 0.0)
      throw ParseError("negative overlap score for " + r.source + " -> " + target.domain);
    r.targets.push_back(std::move(target));
  }
  if (r.targets.size() > kMaxTargets)
    throw ParseError("record for " + r.source + " lists more than " +
                     std::to_string(kMaxTargets) + " targets");
  return r;
}

inline std::string record_to_json_line(const OverlapRecord& r) {
  // Hand-rolled so float formatting is the same shortest round-trip form used
  // by every CSV writer.
  std::string s = "{\"source\": " + nlohmann::json(r.source).dump() + ", \"targets\": [";
  for (std::size_t i = 0; i < r.targets.size(); ++i) {
    if (i) s += ", ";
    s += "{\"domain\": " + nlohmann::json(r.targets[i].domain).dump() +
         ", \"score\": " + format_double(r.targets[i].score) + "}";
  }
  s += "]}";
  return s;
}

/// Replays overlap records from a JSON-lines file.
class FileRecordSource : public MapRecordSource {
 public:
  explicit FileRecordSource(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open records file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      try {
        add(parse_record_line(line));
      } catch (const std::exception& e) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Construction and expansion

namespace detail {

inline void apply_record(MediaGraph& g, const OverlapRecord& rec, int target_level) {
  for (const auto& t : rec.targets) {
    if (t.domain == rec.source) continue;
    if (!(t.score > 0.0)) {
      log::debug("skipping non-positive overlap score " + rec.source + " -> " + t.domain);
      continue;
    }
    g.add_node(t.domain, target_level, false);
    g.add_edge(rec.source, t.domain, t.score);
  }
}

}  // namespace detail

/// Seeds are level 0. Their record targets become level-1 nodes unless they
/// are seeds themselves.
inline MediaGraph build_level0(const std::vector<std::string>& seeds, const RecordSource& records) {
  if (seeds.empty()) throw Error("build_level0: empty seed list");
  std::set<std::string> normalized;
  for (const auto& s : seeds) normalized.insert(normalize_domain(s));

  MediaGraph g;
  for (const auto& s : normalized) g.add_node(s, 0, true);
  for (const auto& s : normalized) {
    g.mark_queried(s);
    auto rec = records.fetch(s);
    if (!rec) {
      log::info("no overlap record for seed " + s);
      continue;
    }
    detail::apply_record(g, *rec, 1);
  }
  g.set_max_level(0);
  return g;
}

/// Query round k: every node not yet queried (all discovered in round k-1,
/// hence at level k) is queried; newly discovered targets get level k+1.
inline MediaGraph expand_level(MediaGraph g, const RecordSource& records, int k) {
  if (k < 1) throw Error("expand_level: k must be >= 1");
  if (g.max_level() != k - 1)
    throw Error("expand_level: graph is at level " + std::to_string(g.max_level()) +
                ", cannot expand to " + std::to_string(k));
  std::vector<std::string> frontier;
  for (const auto& [d, s] : g.node_states())
    if (!s.queried) frontier.push_back(d);

  std::size_t missing = 0;
  for (const auto& d : frontier) {
    g.mark_queried(d);
    auto rec = records.fetch(d);
    if (!rec) {
      ++missing;
      continue;
    }
    detail::apply_record(g, *rec, k + 1);
  }
  if (missing)
    log::info("expand_level " + std::to_string(k) + ": " + std::to_string(missing) + " of " +
              std::to_string(frontier.size()) + " records unavailable");
  g.set_max_level(k);
  return g;
}

inline MediaGraph build_graph(const std::vector<std::string>& seeds, const RecordSource& records,
                              int max_level) {
  auto g = build_level0(seeds, records);
  for (int k = 1; k <= max_level; ++k) g = expand_level(std::move(g), records, k);
  return g;
}

struct GraphStats {
  std::size_t node_count = 0;
  std::size_t edge_count = 0;
  std::map<int, std::size_t> per_level;
};

inline GraphStats graph_stats(const MediaGraph& g) {
  GraphStats s{g.node_count(), g.edge_count(), {}};
  for (const auto& [d, n] : g.node_states()) ++s.per_level[n.level];
  return s;
}

// ---------------------------------------------------------------------------
// Index-based views

/// Bijection between domains and 0..n-1.
class NodeIndex {
 public:
  NodeIndex() = default;
  explicit NodeIndex(std::vector<std::string> domains) : domains_(std::move(domains)) {
    for (std::size_t i = 0; i < domains_.size(); ++i)
      if (!index_.emplace(domains_[i], static_cast<int>(i)).second)
        throw Error("duplicate domain in ordering: " + domains_[i]);
  }

  static NodeIndex sorted(const MediaGraph& g) { return NodeIndex(g.domains()); }

  int size() const { return static_cast<int>(domains_.size()); }
  int at(const std::string& d) const {
    auto it = index_.find(d);
    if (it == index_.end()) throw Error("domain not in ordering: " + d);
    return it->second;
  }
  std::optional<int> find(const std::string& d) const {
    auto it = index_.find(d);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& domain(int i) const { return domains_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& domains() const { return domains_; }

 private:
  std::vector<std::string> domains_;
  std::unordered_map<std::string, int> index_;
};

/// Compressed adjacency lists; neighbors of each node sorted by index.
class Adjacency {
 public:
  Adjacency() = default;

  Adjacency(const MediaGraph& g, const NodeIndex& order, bool weighted = true) {
    if (static_cast<std::size_t>(order.size()) != g.node_count())
      throw Error("ordering does not cover the graph");
    const auto n = static_cast<std::size_t>(order.size());
    std::vector<std::vector<std::pair<int, double>>> lists(n);
    for (const auto& [key, w] : g.edge_map()) {
      const int a = order.at(key.first), b = order.at(key.second);
      const double wt = weighted ? w : 1.0;
      lists[a].emplace_back(b, wt);
      lists[b].emplace_back(a, wt);
    }
    offsets_.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) {
      std::sort(lists[v].begin(), lists[v].end());
      offsets_[v + 1] = offsets_[v] + lists[v].size();
      for (auto [u, w] : lists[v]) {
        targets_.push_back(u);
        weights_.push_back(w);
      }
    }
  }

  int size() const { return offsets_.empty() ? 0 : static_cast<int>(offsets_.size() - 1); }
  std::size_t degree(int v) const { return offsets_[v + 1] - offsets_[v]; }

  std::span<const int> neighbors(int v) const {
    return {targets_.data() + offsets_[v], degree(v)};
  }
  std::span<const double> weights(int v) const {
    return {weights_.data() + offsets_[v], degree(v)};
  }

  std::optional<double> weight(int u, int v) const {
    auto nb = neighbors(u);
    auto it = std::lower_bound(nb.begin(), nb.end(), v);
    if (it == nb.end() || *it != v) return std::nullopt;
    return weights(u)[static_cast<std::size_t>(it - nb.begin())];
  }
  bool connected(int u, int v) const { return weight(u, v).has_value(); }

 private:
  std::vector<std::size_t> offsets_{0};
  std::vector<int> targets_;
  std::vector<double> weights_;
};

/// Row-compressed sparse matrix. Entries of a row are kept in a canonical
/// order (by column domain), so row-wise products do not depend on how the
/// nodes were numbered.
struct SparseRows {
  int rows = 0;
  int cols = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<int> columns;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  double coeff(int i, int j) const {
    for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e)
      if (columns[e] == j) return values[e];
    return 0.0;
  }

  std::vector<std::vector<double>> to_dense() const {
    std::vector<std::vector<double>> d(rows, std::vector<double>(cols, 0.0));
    for (int i = 0; i < rows; ++i)
      for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) d[i][columns[e]] += values[e];
    return d;
  }
};

/// D^-1/2 (A + I) D^-1/2 where D is the degree matrix of A + I. Edge weights
/// are overlap scores, or 1 when `weighted` is false.
inline SparseRows normalized_adjacency(const MediaGraph& g, const NodeIndex& order,
                                       bool weighted = true) {
  if (static_cast<std::size_t>(order.size()) != g.node_count())
    throw Error("normalized_adjacency: ordering does not cover the graph");
  const int n = order.size();
  // Per node: (neighbor domain, weight) with the self loop included, sorted by domain.
  std::vector<std::vector<std::pair<const std::string*, double>>> rows(n);
  for (int v = 0; v < n; ++v) rows[v].emplace_back(&order.domain(v), 1.0);
  for (const auto& [key, w] : g.edge_map()) {
    const int a = order.at(key.first), b = order.at(key.second);
    const double wt = weighted ? w : 1.0;
    rows[a].emplace_back(&key.second, wt);
    rows[b].emplace_back(&key.first, wt);
  }
  std::vector<double> degree(n, 0.0);
  for (int v = 0; v < n; ++v) {
    std::sort(rows[v].begin(), rows[v].end(),
              [](const auto& x, const auto& y) { return *x.first < *y.first; });
    for (const auto& [d, w] : rows[v]) degree[v] += w;
  }
  SparseRows m;
  m.rows = m.cols = n;
  for (int v = 0; v < n; ++v) {
    for (const auto& [d, w] : rows[v]) {
      const int u = order.at(*d);
      m.columns.push_back(u);
      m.values.push_back(w / std::sqrt(degree[v] * degree[u]));
    }
    m.offsets.push_back(m.values.size());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Serialization: nodes.csv (domain,level,is_seed), edges.csv (domain_a,domain_b,score)

inline void write_graph_csv(const MediaGraph& g, std::ostream& nodes, std::ostream& edges) {
  nodes << "domain,level,is_seed\n";
  for (const auto& n : g.nodes())
    nodes << n.domain << ',' << n.level << ',' << (n.is_seed ? 1 : 0) << '\n';
  edges << "domain_a,domain_b,score\n";
  for (const auto& e : g.edges()) edges << e.a << ',' << e.b << ',' << format_double(e.score) << '\n';
}

inline void write_graph_files(const MediaGraph& g, const std::string& nodes_path,
                              const std::string& edges_path) {
  auto n = open_output(nodes_path);
  auto e = open_output(edges_path);
  write_graph_csv(g, n, e);
}

/// Rebuilds a graph. Query state is inferred: nodes at the deepest level are
/// the unqueried frontier; max_level is one less than the deepest level.
inline MediaGraph read_graph_csv(std::istream& nodes, std::istream& edges) {
  const auto nt = read_csv(nodes, "nodes.csv");
  const auto et = read_csv(edges, "edges.csv");
  const int cd = nt.column("domain"), cl = nt.column("level"), cs = nt.column("is_seed");
  if (cd < 0 || cl < 0 || cs < 0) throw ParseError("nodes.csv: expected columns domain,level,is_seed");
  const int ca = et.column("domain_a"), cb = et.column("domain_b"), cw = et.column("score");
  if (ca < 0 || cb < 0 || cw < 0) throw ParseError("edges.csv: expected columns domain_a,domain_b,score");

  MediaGraph g;
  int deepest = 0;
  for (const auto& row : nt.rows) {
    const auto level = static_cast<int>(parse_int(row[cl]));
    const auto seed = parse_int(row[cs]) != 0;
    if (!g.add_node(normalize_domain(row[cd]), level, seed))
      throw ParseError("nodes.csv: duplicate domain " + row[cd]);
    deepest = std::max(deepest, level);
  }
  for (const auto& row : et.rows) g.add_edge(row[ca], row[cb], parse_double(row[cw]));
  const int max_level = std::max(0, deepest - 1);
  std::vector<std::string> queried;
  for (const auto& [d, s] : g.node_states())
    if (s.level <= max_level) queried.push_back(d);
  for (const auto& d : queried) g.mark_queried(d);
  g.set_max_level(max_level);
  return g;
}

inline MediaGraph read_graph_files(const std::string& nodes_path, const std::string& edges_path) {
  std::ifstream n(nodes_path, std::ios::binary), e(edges_path, std::ios::binary);
  if (!n) throw Error("cannot open " + nodes_path);
  if (!e) throw Error("cannot open " + edges_path);
  return read_graph_csv(n, e);
}

}  // namespace mediaprof::graph
