#include <map>
#include <queue>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "mediaprof/graphstore.hpp"

using namespace mediaprof;
using namespace mediaprof::graph;

namespace {

OverlapRecord wsj_record() {
  return {"wsj.com", {{"marketwatch.com", 39.4}, {"cnbc.com", 39.4}, {"bloomberg.com", 35.9}, {"reuters.com", 34.5}}};
}

/// Records of a Moebius ladder on n vertices (3-regular), listing all neighbors.
std::vector<OverlapRecord> cubic_records(int n, std::map<std::string, std::vector<std::string>>& adj) {
  auto name = [](int i) { return "v" + std::to_string(i) + ".net"; };
  std::vector<OverlapRecord> out;
  for (int i = 0; i < n; ++i) {
    OverlapRecord r{name(i), {}};
    for (int j : {(i + 1) % n, (i + n - 1) % n, (i + n / 2) % n}) {
      r.targets.push_back({name(j), 1.0 + (i + j) % 7});
      adj[name(i)].push_back(name(j));
    }
    out.push_back(r);
  }
  return out;
}

std::size_t bfs_within(const std::map<std::string, std::vector<std::string>>& adj, const std::string& s, int hops) {
  std::map<std::string, int> dist{{s, 0}};
  std::queue<std::string> q;
  q.push(s);
  while (!q.empty()) {
    auto u = q.front();
    q.pop();
    if (dist[u] == hops) continue;
    for (const auto& v : adj.at(u))
      if (!dist.contains(v)) {
        dist[v] = dist[u] + 1;
        q.push(v);
      }
  }
  return dist.size();
}

}  // namespace

TEST(NormalizeDomain, StripsSchemeWwwAndPath) {
  EXPECT_EQ(normalize_domain("https://www.WSJ.com/articles"), "wsj.com");
  EXPECT_EQ(normalize_domain("wsj.com"), "wsj.com");
  EXPECT_EQ(normalize_domain("http://user@Example.org:8080/x?y#z"), "example.org");
  EXPECT_THROW(normalize_domain(""), ParseError);
  EXPECT_THROW(normalize_domain("https:///path"), ParseError);
}

TEST(NormalizeDomain, Idempotent) {
  for (const char* raw : {"HTTPS://www.bbc.co.uk/news", "foo.bar", "www.x.io:443"}) {
    const auto once = normalize_domain(raw);
    EXPECT_EQ(normalize_domain(once), once);
  }
}

TEST(BuildLevel0, WsjExample) {
  MapRecordSource src({wsj_record()});
  const auto g = build_level0({"wsj.com"}, src);
  EXPECT_EQ(g.node_count(), 5u);
  EXPECT_EQ(g.edge_count(), 4u);
  EXPECT_EQ(*g.edge_score("wsj.com", "marketwatch.com"), 39.4);
  EXPECT_EQ(*g.edge_score("cnbc.com", "wsj.com"), 39.4);
  EXPECT_EQ(*g.edge_score("wsj.com", "bloomberg.com"), 35.9);
  EXPECT_EQ(*g.edge_score("wsj.com", "reuters.com"), 34.5);
  EXPECT_EQ(g.node("wsj.com").level, 0);
  EXPECT_TRUE(g.node("wsj.com").is_seed);
  EXPECT_EQ(g.node("cnbc.com").level, 1);
  const auto st = graph_stats(g);
  EXPECT_EQ(st.node_count, 5u);
  EXPECT_EQ(st.edge_count, 4u);
  EXPECT_EQ(st.per_level.at(0), 1u);
  EXPECT_EQ(st.per_level.at(1), 4u);
}

TEST(BuildLevel0, EmptySourceGivesIsolatedSeed) {
  MapRecordSource src;
  const auto g = build_level0({"a.com"}, src);
  EXPECT_EQ(g.node_count(), 1u);
  EXPECT_EQ(g.edge_count(), 0u);
}

TEST(BuildLevel0, EmptySeedsRejected) {
  MapRecordSource src;
  EXPECT_THROW(build_level0({}, src), Error);
}

TEST(BuildLevel0, MutualSeedsKeepMaxScoreInEitherOrder) {
  const OverlapRecord a{"a.com", {{"b.com", 12.0}}};
  const OverlapRecord b{"b.com", {{"a.com", 30.5}}};
  const auto g1 = build_level0({"a.com", "b.com"}, MapRecordSource({a, b}));
  const auto g2 = build_level0({"b.com", "a.com"}, MapRecordSource({b, a}));
  EXPECT_EQ(g1.edge_count(), 1u);
  EXPECT_EQ(*g1.edge_score("a.com", "b.com"), 30.5);
  EXPECT_EQ(g1, g2);
  EXPECT_EQ(g1.node("b.com").level, 0);
}

TEST(Records, MoreThanFiveTargetsRejected) {
  OverlapRecord r{"a.com", {}};
  for (int i = 0; i < 6; ++i) r.targets.push_back({"t" + std::to_string(i) + ".com", 1.0});
  EXPECT_THROW(MapRecordSource({r}), ParseError);
}

TEST(Records, JsonLineRoundTrip) {
  const auto r = wsj_record();
  const auto back = parse_record_line(record_to_json_line(r));
  EXPECT_EQ(back.source, r.source);
  ASSERT_EQ(back.targets.size(), r.targets.size());
  for (std::size_t i = 0; i < r.targets.size(); ++i) {
    EXPECT_EQ(back.targets[i].domain, r.targets[i].domain);
    EXPECT_EQ(back.targets[i].score, r.targets[i].score);
  }
}

TEST(Records, FileSourceReportsLineNumbers) {
  const auto path = testing::TempDir() + "bad_records.jsonl";
  {
    std::ofstream out(path);
    out << record_to_json_line(wsj_record()) << "\n{not json}\n";
  }
  try {
    FileRecordSource src(path);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(ExpandLevel, ClosureCaseKeepsNodeCount) {
  const OverlapRecord a{"a.com", {{"b.com", 5.0}}};
  const OverlapRecord b{"b.com", {{"a.com", 4.0}, {"c.com", 2.0}}};
  const OverlapRecord c{"c.com", {{"a.com", 1.0}}};
  MapRecordSource src({a, b, c});
  auto g = build_level0({"a.com", "c.com"}, src);
  const auto before = g.node_count();
  const auto edges_before = g.edge_count();
  g = expand_level(std::move(g), src, 1);
  EXPECT_EQ(g.node_count(), before);
  EXPECT_GE(g.edge_count(), edges_before);
  EXPECT_EQ(g.max_level(), 1);
}

TEST(ExpandLevel, RequiresPreviousLevel) {
  MapRecordSource src;
  auto g = build_level0({"a.com"}, src);
  EXPECT_THROW(expand_level(g, src, 2), Error);
}

TEST(ExpandLevel, CubicGraphMatchesBfsOracle) {
  std::map<std::string, std::vector<std::string>> adj;
  MapRecordSource src(cubic_records(40, adj));
  auto g = build_level0({"v0.net"}, src);
  EXPECT_EQ(g.node_count(), bfs_within(adj, "v0.net", 1));
  for (int k = 1; k <= 5; ++k) {
    const auto prev_nodes = g.nodes();
    const auto prev_edges = g.edges();
    g = expand_level(std::move(g), src, k);
    EXPECT_EQ(g.node_count(), bfs_within(adj, "v0.net", k + 1)) << "k=" << k;
    // Monotone: everything from the previous level survives unchanged.
    for (const auto& n : prev_nodes) EXPECT_EQ(g.node(n.domain).level, n.level);
    for (const auto& e : prev_edges) EXPECT_TRUE(g.edge_score(e.a, e.b).has_value());
    for (const auto& n : g.nodes())
      if (!n.is_seed) {
        EXPECT_LE(n.level, k + 1);
      }
  }
}

TEST(ExpandLevel, SeedOrderDoesNotMatter) {
  std::map<std::string, std::vector<std::string>> adj;
  const auto recs = cubic_records(30, adj);
  auto reversed = recs;
  std::reverse(reversed.begin(), reversed.end());
  const auto g1 = build_graph({"v0.net", "v7.net", "v13.net"}, MapRecordSource(recs), 2);
  const auto g2 = build_graph({"v13.net", "v0.net", "v7.net"}, MapRecordSource(reversed), 2);
  EXPECT_EQ(g1, g2);
}

TEST(GraphStats, EmptyGraph) {
  const MediaGraph g;
  const auto s = graph_stats(g);
  EXPECT_EQ(s.node_count, 0u);
  EXPECT_EQ(s.edge_count, 0u);
}

TEST(MediaGraph, RejectsSelfLoopsAndDanglingEdges) {
  MediaGraph g;
  g.add_node("a.com", 0, true);
  EXPECT_THROW(g.add_edge("a.com", "a.com", 1.0), Error);
  EXPECT_THROW(g.add_edge("a.com", "b.com", 1.0), Error);
  g.add_node("b.com", 1, false);
  EXPECT_THROW(g.add_edge("a.com", "b.com", 0.0), Error);
  EXPECT_THROW(g.add_node("c.com", 0, false), Error);
}

TEST(MediaGraph, FirstDiscoveryLevelWins) {
  MediaGraph g;
  g.add_node("a.com", 2, false);
  EXPECT_FALSE(g.add_node("a.com", 3, false));
  EXPECT_EQ(g.node("a.com").level, 2);
}

TEST(NormalizedAdjacency, SingleNode) {
  MediaGraph g;
  g.add_node("a.com", 0, true);
  const auto a = normalized_adjacency(g, NodeIndex::sorted(g));
  EXPECT_EQ(a.to_dense(), (std::vector<std::vector<double>>{{1.0}}));
}

TEST(NormalizedAdjacency, TwoNodesAllHalf) {
  MediaGraph g;
  g.add_node("a.com", 0, true);
  g.add_node("b.com", 1, false);
  g.add_edge("a.com", "b.com", 1.0);
  const auto a = normalized_adjacency(g, NodeIndex::sorted(g));
  EXPECT_EQ(a.to_dense(), (std::vector<std::vector<double>>{{0.5, 0.5}, {0.5, 0.5}}));
}

TEST(NormalizedAdjacency, SymmetricAndNonnegative) {
  std::map<std::string, std::vector<std::string>> adj;
  const auto g = build_graph({"v0.net"}, MapRecordSource(cubic_records(24, adj)), 3);
  for (bool weighted : {true, false}) {
    const auto d = normalized_adjacency(g, NodeIndex::sorted(g), weighted).to_dense();
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < d.size(); ++j) {
        EXPECT_EQ(d[i][j], d[j][i]);
        EXPECT_GE(d[i][j], 0.0);
      }
  }
}

TEST(NormalizedAdjacency, MatchesDenseFormula) {
  MediaGraph g;
  g.add_node("a.com", 0, true);
  g.add_node("b.com", 1, false);
  g.add_node("c.com", 1, false);
  g.add_edge("a.com", "b.com", 2.0);
  g.add_edge("a.com", "c.com", 3.0);
  const auto d = normalized_adjacency(g, NodeIndex::sorted(g)).to_dense();
  // A + I rows: a: 1,2,3 (6); b: 2,1,0 (3); c: 3,0,1 (4)
  const double deg[] = {6, 3, 4};
  const double a[3][3] = {{1, 2, 3}, {2, 1, 0}, {3, 0, 1}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(d[i][j], a[i][j] / std::sqrt(deg[i] * deg[j]));
}

TEST(Serialization, RoundTrip) {
  std::map<std::string, std::vector<std::string>> adj;
  auto recs = cubic_records(20, adj);
  for (auto& r : recs)
    for (auto& t : r.targets) t.score += 0.1;
  const auto g = build_graph({"v0.net", "v5.net"}, MapRecordSource(recs), 2);
  std::stringstream nodes, edges;
  write_graph_csv(g, nodes, edges);
  const auto back = read_graph_csv(nodes, edges);
  EXPECT_EQ(back, g);
  EXPECT_EQ(back.max_level(), g.max_level());
  std::stringstream n2, e2;
  write_graph_csv(back, n2, e2);
  std::stringstream n1, e1;
  write_graph_csv(g, n1, e1);
  EXPECT_EQ(n1.str(), n2.str());
  EXPECT_EQ(e1.str(), e2.str());
}

TEST(Serialization, EdgesWrittenWithSortedEndpoints) {
  MapRecordSource src({wsj_record()});
  const auto g = build_level0({"wsj.com"}, src);
  std::stringstream nodes, edges;
  write_graph_csv(g, nodes, edges);
  std::string line;
  std::getline(edges, line);
  EXPECT_EQ(line, "domain_a,domain_b,score");
  while (std::getline(edges, line)) {
    const auto fields = split_csv_line(line);
    EXPECT_LT(fields[0], fields[1]);
  }
}

TEST(Adjacency, NeighborsSortedAndWeighted) {
  MapRecordSource src({wsj_record()});
  const auto g = build_level0({"wsj.com"}, src);
  const auto order = NodeIndex::sorted(g);
  const Adjacency adj(g, order, true);
  const int w = order.at("wsj.com");
  EXPECT_EQ(adj.degree(w), 4u);
  const auto nb = adj.neighbors(w);
  EXPECT_TRUE(std::is_sorted(nb.begin(), nb.end()));
  EXPECT_EQ(*adj.weight(w, order.at("reuters.com")), 34.5);
  const Adjacency unweighted(g, order, false);
  EXPECT_EQ(*unweighted.weight(w, order.at("reuters.com")), 1.0);
}
