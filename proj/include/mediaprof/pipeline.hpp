#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "alexafeat.hpp"
#include "classify.hpp"
#include "common.hpp"
#include "embedding.hpp"
#include "evalkit.hpp"
#include "gnn.hpp"
#include "graphstore.hpp"
#include "node2vec.hpp"
#include "svm.hpp"
#include "synthgen.hpp"

namespace mediaprof::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kToolVersion = "0.1.0";

struct ConfigError : Error {
  using Error::Error;
};

struct DependencyError : Error {
  using Error::Error;
};

struct LeakageError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Content hashes

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

// ---------------------------------------------------------------------------
// Run configuration

struct ExternalChannel {
  std::string name;
  std::string path;
};

/// Module seeds are derived from the master seed as derive_seed(seed, module).
struct RunConfig {
  fs::path base_dir = ".";
  std::string output_dir = "out";
  std::uint64_t seed = 42;
  std::string task = "factuality";

  std::optional<synth::SynthConfig> synth;
  double halo_factor = 0.0;

  std::string records, seeds, features, labels;  // empty: synth outputs

  int max_level = 2;
  int impute_k = 5;
  std::vector<std::string> embeddings{"node2vec", "gcn", "sage"};
  node2vec::Node2VecConfig node2vec;
  gnn::GnnConfig gnn;
  std::vector<ExternalChannel> external;
  bool metrics_channel = true;
  svm::SvmConfig svm;
  int folds = 5;
  bool leakage_check = true;
  classify::FusionMode fusion_mode = classify::FusionMode::uniform;
  std::vector<std::string> fusion_channels;  // empty: every channel

  std::uint64_t module_seed(std::string_view module) const { return derive_seed(seed, module); }

  fs::path out() const { return base_dir / output_dir; }
  fs::path resolve(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : base_dir / q;
  }

  std::vector<std::string> channel_names() const {
    std::vector<std::string> n = embeddings;
    if (metrics_channel) n.push_back("alexametrics");
    for (const auto& e : external) n.push_back(e.name);
    return n;
  }
};

/// Walks a JSON object, type-checking keys and rejecting unknown ones. Errors
/// carry the dotted path of the offending key.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config error at " + (where.empty() ? std::string("<root>") : where) + ": " + what);
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), at(key));
  }

  ConfigReader object(const std::string& key) {
    seen_.insert(key);
    return ConfigReader(j_.at(key), at(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) fail(at(k), "unknown key");
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(where, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        fail(where, "expected a nonnegative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(where, "expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(where, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(where, "expected a string");
      return v.get<std::string>();
    } else if constexpr (requires { typename T::value_type; std::tuple_size<T>::value; }) {
      if (!v.is_array() || v.size() != std::tuple_size<T>::value)
        fail(where, "expected an array of " + std::to_string(std::tuple_size<T>::value) + " entries");
      T out{};
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]");
      return out;
    } else {
      if (!v.is_array()) fail(where, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void validated(const std::string& where, F&& check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    ConfigReader::fail(where, e.what());
  }
}

inline RunConfig parse_config(const json& j, const fs::path& base_dir = ".") {
  RunConfig c;
  c.base_dir = base_dir;
  ConfigReader r(j, "");
  r.read("output_dir", c.output_dir);
  r.read("seed", c.seed);
  r.read("task", c.task);
  validated("task", [&] { eval::task_by_name(c.task); });

  if (r.has("synth")) {
    synth::SynthConfig s;
    auto sr = r.object("synth");
    sr.read("n_nodes", s.n_nodes);
    sr.read("classes", s.classes);
    sr.read("p_in", s.p_in);
    sr.read("p_out", s.p_out);
    sr.read("homophilous", s.homophilous);
    sr.read("class_shift", s.class_shift);
    sr.read("missingness", s.missingness);
    sr.read("label_fraction", s.label_fraction);
    sr.read("halo_factor", c.halo_factor);
    sr.finish();
    validated("synth", [&] { s.validate(); });
    if (!(c.halo_factor >= 0)) ConfigReader::fail("synth.halo_factor", "must be nonnegative");
    c.synth = s;
  }

  if (r.has("inputs")) {
    auto ir = r.object("inputs");
    ir.read("records", c.records);
    ir.read("seeds", c.seeds);
    ir.read("features", c.features);
    ir.read("labels", c.labels);
    ir.finish();
  }
  for (auto [key, value] : {std::pair{"records", &c.records}, std::pair{"seeds", &c.seeds},
                            std::pair{"features", &c.features}, std::pair{"labels", &c.labels}}) {
    const std::string where = std::string("inputs.") + key;
    if (value->empty()) {
      if (!c.synth) ConfigReader::fail(where, "required when there is no synth section");
    } else if (!fs::exists(c.resolve(*value))) {
      ConfigReader::fail(where, "file not found: " + c.resolve(*value).string());
    }
  }

  if (r.has("graph")) {
    auto gr = r.object("graph");
    gr.read("max_level", c.max_level);
    gr.finish();
    if (c.max_level < 0) ConfigReader::fail("graph.max_level", "must be >= 0");
  }
  if (r.has("impute")) {
    auto ir = r.object("impute");
    ir.read("k", c.impute_k);
    ir.finish();
    if (c.impute_k < 1) ConfigReader::fail("impute.k", "must be >= 1");
  }

  r.read("embeddings", c.embeddings);
  std::set<std::string> names;
  for (std::size_t i = 0; i < c.embeddings.size(); ++i) {
    const auto& e = c.embeddings[i];
    if (e != "node2vec" && e != "gcn" && e != "sage")
      ConfigReader::fail("embeddings[" + std::to_string(i) + "]", "expected node2vec, gcn or sage");
    if (!names.insert(e).second) ConfigReader::fail("embeddings[" + std::to_string(i) + "]", "duplicate");
  }

  if (r.has("node2vec")) {
    auto nr = r.object("node2vec");
    auto& n = c.node2vec;
    nr.read("num_walks", n.num_walks);
    nr.read("walk_length", n.walk_length);
    nr.read("dim", n.dim);
    nr.read("p", n.p);
    nr.read("q", n.q);
    nr.read("window", n.window);
    nr.read("negatives", n.negatives);
    nr.read("epochs", n.epochs);
    nr.read("learning_rate", n.learning_rate);
    nr.read("weighted", n.weighted);
    nr.finish();
  }
  c.node2vec.seed = c.module_seed("node2vec");
  validated("node2vec", [&] { c.node2vec.validate(); });

  if (r.has("gnn")) {
    auto gr = r.object("gnn");
    auto& g = c.gnn;
    gr.read("layers", g.layers);
    gr.read("hidden_dim", g.hidden_dim);
    gr.read("epochs", g.epochs);
    gr.read("learning_rate", g.learning_rate);
    gr.read("weight_decay", g.weight_decay);
    gr.read("dropout", g.dropout);
    gr.read("sage_sample_sizes", g.sage_sample_sizes);
    gr.read("weighted", g.weighted);
    std::string opt = "adam";
    gr.read("optimizer", opt);
    if (opt != "adam" && opt != "sgd") ConfigReader::fail("gnn.optimizer", "expected adam or sgd");
    g.optimizer = opt == "adam" ? gnn::Optimizer::adam : gnn::Optimizer::sgd;
    gr.finish();
  }
  validated("gnn", [&] {
    auto g = c.gnn;
    g.variant = gnn::Variant::sage;
    g.validate();
  });

  if (r.has("external_channels")) {
    const auto& arr = r.raw("external_channels");
    if (!arr.is_array()) ConfigReader::fail("external_channels", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "external_channels[" + std::to_string(i) + "]";
      ConfigReader er(arr[i], where);
      ExternalChannel e;
      er.read("name", e.name);
      er.read("path", e.path);
      er.finish();
      if (e.name.empty()) ConfigReader::fail(where + ".name", "required");
      if (e.path.empty()) ConfigReader::fail(where + ".path", "required");
      if (!fs::exists(c.resolve(e.path)))
        ConfigReader::fail(where + ".path", "file not found: " + c.resolve(e.path).string());
      if (e.name == "alexametrics" || !names.insert(e.name).second)
        ConfigReader::fail(where + ".name", "duplicate channel name " + e.name);
      c.external.push_back(e);
    }
  }
  r.read("metrics_channel", c.metrics_channel);

  if (r.has("svm")) {
    auto sr = r.object("svm");
    sr.read("C", c.svm.c_grid);
    sr.read("gamma", c.svm.gamma_grid);
    sr.read("inner_folds", c.svm.inner_folds);
    sr.read("tolerance", c.svm.tolerance);
    sr.read("standardize", c.svm.standardize);
    sr.finish();
  }
  c.svm.seed = c.module_seed("svm");
  validated("svm", [&] { c.svm.validate(); });

  if (r.has("cv")) {
    auto cr = r.object("cv");
    cr.read("folds", c.folds);
    cr.read("leakage_check", c.leakage_check);
    cr.finish();
    if (c.folds < 2) ConfigReader::fail("cv.folds", "must be >= 2");
  }

  if (r.has("fusion")) {
    auto fr = r.object("fusion");
    std::string mode = "uniform";
    fr.read("mode", mode);
    if (mode != "uniform" && mode != "learned") ConfigReader::fail("fusion.mode", "expected uniform or learned");
    c.fusion_mode = mode == "uniform" ? classify::FusionMode::uniform : classify::FusionMode::learned;
    fr.read("channels", c.fusion_channels);
    fr.finish();
  }
  const auto all = c.channel_names();
  if (all.empty()) ConfigReader::fail("embeddings", "no channel configured");
  for (std::size_t i = 0; i < c.fusion_channels.size(); ++i)
    if (std::find(all.begin(), all.end(), c.fusion_channels[i]) == all.end())
      ConfigReader::fail("fusion.channels[" + std::to_string(i) + "]",
                         "unknown channel " + c.fusion_channels[i]);
  r.finish();
  return c;
}

inline RunConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override = {}) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config error: " + path.string() + " is not valid JSON (" + e.what() + ")");
  }
  if (seed_override) {
    if (!j.is_object()) throw ConfigError("config error at <root>: expected an object");
    j["seed"] = *seed_override;
  }
  return parse_config(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// Shared readers

inline std::vector<std::string> read_seed_list(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto d = graph::normalize_domain(t);
    if (seen.insert(d).second) out.push_back(std::move(d));
  }
  return out;
}

/// Domain -> class index for the task column of labels.csv; blank cells are unlabeled.
inline std::map<std::string, int> read_labels(const fs::path& p, const eval::Task& task) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  const auto t = read_csv(in, p.string());
  const int dcol = t.column("domain"), lcol = t.column(task.name);
  if (dcol < 0 || lcol < 0) throw ParseError(p.string() + ": needs columns domain and " + task.name);
  std::map<std::string, int> out;
  for (const auto& row : t.rows) {
    const auto value = std::string(trim(row[static_cast<std::size_t>(lcol)]));
    if (value.empty()) continue;
    const int k = task.index_of(value);
    if (k < 0) throw ParseError(p.string() + ": unknown " + task.name + " label '" + value + "'");
    out[graph::normalize_domain(row[static_cast<std::size_t>(dcol)])] = k;
  }
  return out;
}

/// Labeled graph nodes in domain order.
inline classify::LabeledSet labeled_set(const std::vector<std::string>& domains,
                                        const std::map<std::string, int>& labels) {
  std::set<std::string> in_graph(domains.begin(), domains.end());
  classify::LabeledSet set;
  std::size_t dropped = 0;
  for (const auto& [d, y] : labels) {
    if (!in_graph.contains(d)) {
      ++dropped;
      continue;
    }
    set.domains.push_back(d);
    set.labels.push_back(y);
  }
  if (dropped) log::warn(std::to_string(dropped) + " labeled domains are not graph nodes and are ignored");
  return set;
}

inline RowMatrix feature_matrix(const features::FeatureTable& table, const std::vector<std::string>& order) {
  RowMatrix x(static_cast<Eigen::Index>(order.size()), features::kFeatureDim);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto v = features::feature_vector(table.at(order[i]));
    for (int k = 0; k < features::kFeatureDim; ++k) x(static_cast<Eigen::Index>(i), k) = v[k];
  }
  return x;
}

/// Column-wise z-scores over all nodes (label-free).
inline RowMatrix standardize_columns(RowMatrix x) {
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const double m = x.col(k).mean();
    const double sd = std::sqrt((x.col(k).array() - m).square().mean());
    x.col(k) = (x.col(k).array() - m) / (sd > 0 ? sd : 1.0);
  }
  return x;
}

inline features::FeatureTable read_imputed(const fs::path& p) {
  std::istringstream in(read_file(p));
  return features::read_feature_table(in, p.string());
}

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  return m;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  auto out = open_output(p.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Stages

struct Stage {
  std::string name;
  std::vector<fs::path> inputs;   // absolute
  std::vector<std::string> outputs;  // relative to the output directory
  json config;
  std::function<void()> run;
};

struct StageOutcome {
  std::string stage;
  bool ran = false;
};

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order{"synth", "build-graph", "impute", "embed",
                                              "train", "fuse",        "evaluate", "report"};
  return order;
}

class Pipeline {
 public:
  explicit Pipeline(RunConfig config) : c_(std::move(config)), task_(eval::task_by_name(c_.task)) {}

  const RunConfig& config() const { return c_; }
  fs::path out(const std::string& rel) const { return c_.out() / rel; }

  std::vector<std::string> stages() const {
    std::vector<std::string> s;
    for (const auto& n : stage_order())
      if (n != "synth" || c_.synth) s.push_back(n);
    return s;
  }

  Stage stage(const std::string& name) const {
    if (name == "synth") return synth_stage();
    if (name == "build-graph") return graph_stage();
    if (name == "impute") return impute_stage();
    if (name == "embed") return embed_stage();
    if (name == "train") return train_stage();
    if (name == "fuse") return fuse_stage();
    if (name == "evaluate") return evaluate_stage();
    if (name == "report") return report_stage();
    throw Error("unknown stage '" + name + "'");
  }

  fs::path manifest_path(const std::string& stage) const { return out(stage + "/manifest.json"); }

  /// Runs one stage unless its manifest matches. Returns whether it ran.
  bool run_stage(const std::string& name, bool force = false) {
    if (name == "synth" && !c_.synth) throw ConfigError("config error at synth: no synth section configured");
    const Stage s = stage(name);
    check_dependencies(s);
    json inputs = json::object();
    for (const auto& p : s.inputs) inputs[p.string()] = sha256_file(p);
    const std::string config_hash = sha256_hex(s.config.dump());
    if (!force && up_to_date(s, inputs, config_hash)) {
      log::info(name + ": up to date");
      return false;
    }
    log::info(name + ": running");
    for (const auto& o : s.outputs) fs::create_directories(out(o).parent_path());
    s.run();
    json outputs = json::object();
    for (const auto& o : s.outputs) {
      if (!fs::exists(out(o))) throw Error(name + ": stage did not produce " + o);
      outputs[o] = sha256_file(out(o));
    }
    const json manifest{{"stage", name},
                        {"tool_version", kToolVersion},
                        {"seed", c_.seed},
                        {"config_hash", config_hash},
                        {"config", s.config},
                        {"inputs", inputs},
                        {"outputs", outputs}};
    write_text(manifest_path(name), manifest.dump(2) + "\n");
    return true;
  }

  std::vector<StageOutcome> run_all(bool force = false) {
    std::vector<StageOutcome> r;
    for (const auto& n : stages()) r.push_back({n, run_stage(n, force)});
    return r;
  }

 private:
  RunConfig c_;
  eval::Task task_;

  fs::path input(const std::string& configured, const std::string& synth_name) const {
    if (!configured.empty()) return c_.resolve(configured);
    return out("synth/" + synth_name);
  }
  fs::path records_path() const { return input(c_.records, "records.jsonl"); }
  fs::path seeds_path() const { return input(c_.seeds, "seeds.txt"); }
  fs::path features_path() const { return input(c_.features, "features.csv"); }
  fs::path labels_path() const { return input(c_.labels, "labels.csv"); }

  std::string producer_of(const fs::path& p) const {
    const auto rel = p.lexically_relative(c_.out());
    if (rel.empty() || rel.native().starts_with("..")) return {};
    const auto top = rel.begin()->string();
    for (const auto& n : stage_order())
      if (n == top) return n;
    return {};
  }

  void check_dependencies(const Stage& s) const {
    for (const auto& p : s.inputs) {
      if (fs::exists(p)) continue;
      const auto up = producer_of(p);
      if (!up.empty())
        throw DependencyError(s.name + ": missing " + p.string() + "; run the '" + up +
                              "' stage first (mediaprof " + up + " --config ...)");
      throw DependencyError(s.name + ": input file not found: " + p.string());
    }
  }

  bool up_to_date(const Stage& s, const json& inputs, const std::string& config_hash) const {
    const auto mp = manifest_path(s.name);
    if (!fs::exists(mp)) return false;
    json m;
    try {
      m = json::parse(read_file(mp));
    } catch (const std::exception&) {
      log::warn(s.name + ": unreadable manifest, rerunning");
      return false;
    }
    if (m.value("tool_version", "") != kToolVersion || m.value("config_hash", "") != config_hash) return false;
    if (m.value("inputs", json::object()) != inputs) return false;
    const auto outputs = m.value("outputs", json::object());
    for (const auto& o : s.outputs) {
      if (!outputs.contains(o) || !fs::exists(out(o))) return false;
      // A modified output counts as new upstream data: downstream manifests
      // see the changed hash and rerun.
      if (outputs.at(o).get<std::string>() != sha256_file(out(o)))
        log::warn(s.name + ": " + o + " changed since it was written; keeping it");
    }
    return true;
  }

  // -- synth ----------------------------------------------------------------

  Stage synth_stage() const {
    auto sc = *c_.synth;
    sc.seed = c_.module_seed("synth");
    Stage s{"synth", {}, {"synth/records.jsonl", "synth/features.csv", "synth/labels.csv", "synth/seeds.txt"},
            {{"synth", synth::to_json(sc)}, {"halo_factor", c_.halo_factor}}, {}};
    s.run = [this, sc] {
      auto data = synth::generate(sc);
      data = synth::plant_unlabeled_halo(std::move(data), c_.halo_factor, sc.seed, sc);
      synth::write_fixture(data, out("synth").string());
    };
    return s;
  }

  // -- build-graph ----------------------------------------------------------

  Stage graph_stage() const {
    Stage s{"build-graph", {seeds_path(), records_path()}, {"build-graph/nodes.csv", "build-graph/edges.csv"},
            {{"max_level", c_.max_level}}, {}};
    s.run = [this] {
      const auto seeds = read_seed_list(seeds_path());
      const graph::FileRecordSource records(records_path().string());
      const auto g = graph::build_graph(seeds, records, c_.max_level);
      const auto st = graph::graph_stats(g);
      log::info("graph: " + std::to_string(st.node_count) + " nodes, " + std::to_string(st.edge_count) + " edges");
      graph::write_graph_files(g, out("build-graph/nodes.csv").string(), out("build-graph/edges.csv").string());
    };
    return s;
  }

  graph::MediaGraph read_graph() const {
    return graph::read_graph_files(out("build-graph/nodes.csv").string(), out("build-graph/edges.csv").string());
  }

  // -- impute ---------------------------------------------------------------

  Stage impute_stage() const {
    Stage s{"impute",
            {out("build-graph/nodes.csv"), out("build-graph/edges.csv"), features_path()},
            {"impute/features.csv"},
            {{"k", c_.impute_k}},
            {}};
    s.run = [this] {
      const auto g = read_graph();
      const auto raw = features::read_raw_features_file(features_path().string());
      const auto table = features::impute_missing(g, features::align_to_graph(g, raw), c_.impute_k);
      auto o = open_output(out("impute/features.csv").string());
      features::write_feature_table(table, o);
    };
    return s;
  }

  // -- embed ----------------------------------------------------------------

  gnn::GnnConfig gnn_config(const std::string& variant) const {
    auto g = c_.gnn;
    g.variant = gnn::parse_variant(variant);
    g.seed = c_.module_seed(variant);
    return g;
  }

  std::vector<std::string> embed_outputs() const {
    std::vector<std::string> o;
    for (const auto& e : c_.embeddings) {
      if (e == "node2vec") {
        o.push_back("embed/node2vec.csv");
        o.push_back("embed/node2vec.json");
      } else {
        for (int f = 0; f < c_.folds; ++f) {
          o.push_back("embed/" + e + ".fold" + std::to_string(f) + ".csv");
          o.push_back("embed/" + e + ".fold" + std::to_string(f) + ".json");
        }
      }
    }
    return o;
  }

  bool uses_gnn() const {
    return std::any_of(c_.embeddings.begin(), c_.embeddings.end(), [](const auto& e) { return e != "node2vec"; });
  }

  Stage embed_stage() const {
    Stage s{"embed", {out("build-graph/nodes.csv"), out("build-graph/edges.csv")}, embed_outputs(), json::object(), {}};
    s.config["embeddings"] = c_.embeddings;
    if (std::find(c_.embeddings.begin(), c_.embeddings.end(), "node2vec") != c_.embeddings.end())
      s.config["node2vec"] = c_.node2vec;
    if (uses_gnn()) {
      s.inputs.push_back(out("impute/features.csv"));
      s.inputs.push_back(labels_path());
      s.config["gnn"] = gnn_config("gcn");
      s.config["gnn"].erase("variant");
      s.config["gnn"].erase("seed");
      s.config["task"] = c_.task;
      s.config["folds"] = c_.folds;
      s.config["cv_seed"] = c_.module_seed("cv");
    }
    s.run = [this] {
      const auto g = read_graph();
      const auto order = graph::NodeIndex::sorted(g);
      for (const auto& e : c_.embeddings) {
        if (e == "node2vec") {
          const auto emb = node2vec::embed(g, order, c_.node2vec);
          write_embedding(emb, out("embed/node2vec.csv").string(), out("embed/node2vec.json").string(),
                          {{"config", c_.node2vec}});
          continue;
        }
        const auto gc = gnn_config(e);
        const auto x = standardize_columns(feature_matrix(read_imputed(out("impute/features.csv")), order.domains()));
        const auto set = labeled_set(order.domains(), read_labels(labels_path(), task_));
        if (set.size() == 0) throw Error("embed: no labeled graph nodes for " + e);
        const auto fold_of = classify::fold_assignment(set, c_.folds, c_.module_seed("cv"));
        for (int f = 0; f < c_.folds; ++f) {
          // Only this fold's training labels reach the GNN.
          gnn::LabelMask mask;
          mask.label.assign(static_cast<std::size_t>(order.size()), -1);
          mask.split.assign(static_cast<std::size_t>(order.size()), gnn::Split::unlabeled);
          for (std::size_t i = 0; i < set.size(); ++i) {
            const auto r = static_cast<std::size_t>(order.at(set.domains[i]));
            if (fold_of[i] == f) {
              mask.split[r] = gnn::Split::test;
            } else {
              mask.split[r] = gnn::Split::train;
              mask.label[r] = set.labels[i];
            }
          }
          auto fc = gc;
          fc.seed = derive_seed(gc.seed, static_cast<std::uint64_t>(f));
          const auto res = gnn::train_semi_supervised(g, order, x, mask, task_.num_classes(), fc);
          log::info(e + " fold " + std::to_string(f) + ": loss " + format_double(res.initial_loss) + " -> " +
                    format_double(res.final_loss));
          const auto stem = "embed/" + e + ".fold" + std::to_string(f);
          write_embedding(res.embedding, out(stem + ".csv").string(), out(stem + ".json").string(),
                          {{"config", fc}, {"fold", f}, {"initial_loss", res.initial_loss}, {"final_loss", res.final_loss}});
        }
      }
    };
    return s;
  }

  // -- train ----------------------------------------------------------------

  static std::string channel_file(const std::string& name) { return "train/" + name + ".json"; }

  std::vector<classify::RepresentationChannel> load_channels(const std::vector<std::string>& order) const {
    std::vector<classify::RepresentationChannel> chans;
    for (const auto& e : c_.embeddings) {
      if (e == "node2vec") {
        chans.push_back(classify::make_channel(e, read_embedding(out("embed/node2vec.csv").string(), e)));
        continue;
      }
      classify::RepresentationChannel ch;
      ch.name = e;
      for (int f = 0; f < c_.folds; ++f) {
        auto emb = read_embedding(out("embed/" + e + ".fold" + std::to_string(f) + ".csv").string(), e);
        if (f == 0) {
          ch.domains = emb.domains;
          ch.coverage.assign(emb.domains.size(), true);
          ch.matrix = emb.values;
        }
        ch.fold_matrices.push_back(std::move(emb.values));
      }
      chans.push_back(std::move(ch));
    }
    if (c_.metrics_channel) {
      const auto x = feature_matrix(read_imputed(out("impute/features.csv")), order);
      chans.push_back({"alexametrics", order, x, std::vector<bool>(order.size(), true), {}});
    }
    for (const auto& ext : c_.external)
      chans.push_back(classify::ingest_external_representation(c_.resolve(ext.path).string(), order, ext.name));
    return chans;
  }

  Stage train_stage() const {
    Stage s{"train", {out("build-graph/nodes.csv"), labels_path()}, {"train/folds.csv"}, json::object(), {}};
    for (const auto& o : embed_outputs())
      if (o.ends_with(".csv")) s.inputs.push_back(out(o));
    if (c_.metrics_channel) s.inputs.push_back(out("impute/features.csv"));
    for (const auto& e : c_.external) s.inputs.push_back(c_.resolve(e.path));
    for (const auto& n : c_.channel_names()) s.outputs.push_back(channel_file(n));
    s.config = {{"task", c_.task},   {"svm", c_.svm},         {"folds", c_.folds},
                {"cv_seed", c_.module_seed("cv")}, {"channels", c_.channel_names()},
                {"leakage_check", c_.leakage_check}};
    s.run = [this] {
      const auto order = read_graph().domains();
      const auto set = labeled_set(order, read_labels(labels_path(), task_));
      if (set.size() == 0) throw Error("train: no labeled graph nodes");
      const auto fold_of = classify::fold_assignment(set, c_.folds, c_.module_seed("cv"));
      {
        auto o = open_output(out("train/folds.csv").string());
        o << "domain,label,fold\n";
        for (std::size_t i = 0; i < set.size(); ++i)
          o << set.domains[i] << ',' << task_.classes[static_cast<std::size_t>(set.labels[i])] << ',' << fold_of[i] << '\n';
      }
      const auto chans = load_channels(order);
      std::vector<std::string> leaked;
      for (const auto& ch : chans) {
        for (const auto& d : set.domains) {
          const auto it = std::find(ch.domains.begin(), ch.domains.end(), d);
          if (it == ch.domains.end()) throw Error("train: channel " + ch.name + " does not cover " + d);
        }
        const auto r = classify::cross_validate_channel(ch, set, task_, fold_of, c_.folds, c_.svm);
        std::string leakage = "skipped";
        if (c_.leakage_check) {
          const bool ok = classify::leakage_check(ch, set, task_, fold_of, c_.svm, c_.module_seed("leakage"));
          leakage = ok ? "passed" : "failed";
          if (!ok) leaked.push_back(ch.name);
        }
        json fits = json::array();
        for (const auto& f : r.fits)
          fits.push_back({{"C", f.c}, {"gamma", f.gamma}, {"inner_macro_f1", f.grid_score}, {"fingerprint", hex64(f.fingerprint)}});
        const json j{{"channel", ch.name}, {"report", eval::to_json(r.report)}, {"fits", fits},
                     {"leakage_check", leakage}, {"domains", set.domains}, {"oof", matrix_json(r.oof)}};
        write_text(out(channel_file(ch.name)), j.dump() + "\n");
      }
      if (!leaked.empty()) {
        std::string list;
        for (const auto& n : leaked) list += (list.empty() ? "" : ", ") + n;
        throw LeakageError("leakage check failed for channel(s): " + list);
      }
    };
    return s;
  }

  struct FoldTable {
    classify::LabeledSet set;
    std::vector<int> fold_of;
  };

  FoldTable read_folds() const {
    std::ifstream in(out("train/folds.csv"), std::ios::binary);
    const auto t = read_csv(in, "train/folds.csv");
    FoldTable ft;
    for (const auto& row : t.rows) {
      ft.set.domains.push_back(row.at(0));
      ft.set.labels.push_back(task_.index_of(row.at(1)));
      ft.fold_of.push_back(static_cast<int>(parse_int(row.at(2))));
    }
    return ft;
  }

  // -- fuse -----------------------------------------------------------------

  std::vector<std::string> fused_channels() const {
    return c_.fusion_channels.empty() ? c_.channel_names() : c_.fusion_channels;
  }

  Stage fuse_stage() const {
    Stage s{"fuse", {out("train/folds.csv")}, {"fuse/fusion.json"}, json::object(), {}};
    for (const auto& n : fused_channels()) s.inputs.push_back(out(channel_file(n)));
    s.config = {{"mode", c_.fusion_mode == classify::FusionMode::uniform ? "uniform" : "learned"},
                {"channels", fused_channels()}, {"task", c_.task}, {"folds", c_.folds}};
    s.run = [this] {
      const auto ft = read_folds();
      std::vector<classify::ChannelResult> results;
      for (const auto& n : fused_channels()) {
        const auto j = json::parse(read_file(out(channel_file(n))));
        classify::ChannelResult r;
        r.name = n;
        r.oof = matrix_from_json(j.at("oof"));
        results.push_back(std::move(r));
      }
      const auto f = classify::fuse_out_of_fold(results, ft.set, task_, ft.fold_of, c_.folds, c_.fusion_mode);
      const json j{{"report", eval::to_json(f.report)}, {"weights", f.weights}, {"channels", f.channels},
                   {"oof", matrix_json(f.fused)}};
      write_text(out("fuse/fusion.json"), j.dump() + "\n");
    };
    return s;
  }

  // -- evaluate -------------------------------------------------------------

  Stage evaluate_stage() const {
    Stage s{"evaluate", {}, {"evaluate/reports.json"}, {{"task", c_.task}, {"folds", c_.folds}}, {}};
    s.inputs.push_back(out("train/folds.csv"));
    for (const auto& n : c_.channel_names()) s.inputs.push_back(out(channel_file(n)));
    s.inputs.push_back(out("fuse/fusion.json"));
    s.run = [this] {
      const auto ft = read_folds();
      json reports = json::array();
      // Cross-validated majority baseline: each fold predicts its training majority.
      std::vector<int> pred(ft.set.size());
      for (int f = 0; f < c_.folds; ++f) {
        std::vector<int> train;
        for (std::size_t i = 0; i < ft.set.size(); ++i)
          if (ft.fold_of[i] != f) train.push_back(ft.set.labels[i]);
        if (train.empty()) continue;
        const int k = eval::majority_baseline(train, task_);
        for (std::size_t i = 0; i < ft.set.size(); ++i)
          if (ft.fold_of[i] == f) pred[i] = k;
      }
      reports.push_back(eval::to_json(eval::make_report(task_, "majority-baseline", ft.set.labels, pred, ft.fold_of, c_.folds)));
      for (const auto& n : c_.channel_names())
        reports.push_back(json::parse(read_file(out(channel_file(n)))).at("report"));
      reports.push_back(json::parse(read_file(out("fuse/fusion.json"))).at("report"));
      write_text(out("evaluate/reports.json"), json{{"task", c_.task}, {"reports", reports}}.dump(2) + "\n");
    };
    return s;
  }

  // -- report ---------------------------------------------------------------

  Stage report_stage() const {
    Stage s{"report", {out("evaluate/reports.json")}, {"report/report.json", "report/report.txt"}, json::object(), {}};
    s.run = [this] {
      const auto j = json::parse(read_file(out("evaluate/reports.json")));
      std::vector<eval::EvalReport> reports;
      for (const auto& r : j.at("reports")) reports.push_back(eval::report_from_json(r));
      const auto rendered = eval::render_report(reports);
      write_text(out("report/report.json"), rendered.json.dump(2) + "\n");
      write_text(out("report/report.txt"), rendered.text);
    };
    return s;
  }
};

}  // namespace mediaprof::pipeline
