#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"

namespace mediaprof::eval {

/// A prediction task and its class names, in class-index order.
struct Task {
  std::string name;
  std::vector<std::string> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }

  int index_of(std::string_view label) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == label) return static_cast<int>(i);
    return -1;
  }
};

inline Task factuality_task() { return {"factuality", {"low", "mixed", "high"}}; }
inline Task bias_task() { return {"bias", {"left", "centre", "right"}}; }

inline Task task_by_name(const std::string& name) {
  if (name == "factuality") return factuality_task();
  if (name == "bias") return bias_task();
  throw Error("unknown task '" + name + "' (expected factuality or bias)");
}

using ConfusionMatrix = std::vector<std::vector<long long>>;

/// rows: true class, columns: predicted class.
inline ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred,
                                 int num_classes) {
  if (y_true.size() != y_pred.size()) throw Error("confusion: length mismatch");
  ConfusionMatrix m(static_cast<std::size_t>(num_classes),
                    std::vector<long long>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= num_classes || y_pred[i] < 0 || y_pred[i] >= num_classes)
      throw Error("confusion: label outside class set");
    ++m[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  return m;
}

inline double macro_f1(const ConfusionMatrix& m) {
  const auto c = m.size();
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    long long tp = m[k][k], predicted = 0, actual = 0;
    for (std::size_t j = 0; j < c; ++j) {
      predicted += m[j][k];
      actual += m[k][j];
    }
    // F1 = 2PR/(P+R) = 2tp/(predicted+actual); zero when P+R = 0.
    if (tp > 0) total += 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + actual);
  }
  return total / static_cast<double>(c);
}

/// Unweighted mean over all classes of the class set; a class with P+R = 0 scores 0.
inline double macro_f1(std::span<const int> y_true, std::span<const int> y_pred, int num_classes) {
  if (y_true.empty()) throw Error("macro_f1: empty input");
  return macro_f1(confusion(y_true, y_pred, num_classes));
}

inline double accuracy(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.empty()) throw Error("accuracy: empty input");
  if (y_true.size() != y_pred.size()) throw Error("accuracy: length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) hit += y_true[i] == y_pred[i];
  return static_cast<double>(hit) / static_cast<double>(y_true.size());
}

/// Most frequent training class; ties go to the lexicographically smallest class name.
inline int majority_baseline(std::span<const int> train_labels, const Task& task) {
  if (train_labels.empty()) throw Error("majority_baseline: no labels");
  std::vector<long long> count(static_cast<std::size_t>(task.num_classes()), 0);
  for (int y : train_labels) ++count.at(static_cast<std::size_t>(y));
  int best = -1;
  for (int k = 0; k < task.num_classes(); ++k) {
    if (best < 0 || count[k] > count[best] ||
        (count[k] == count[best] && task.classes[k] < task.classes[best]))
      best = k;
  }
  return best;
}

/// Fold index per sample. Each class is shuffled with its own stream and dealt
/// round-robin, continuing across classes so fold sizes differ by at most one.
inline std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error("stratified_folds: need at least 2 folds");
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  std::vector<int> fold(labels.size(), 0);
  std::size_t dealt = 0;
  for (auto& [cls, members] : by_class) {
    if (static_cast<int>(members.size()) < folds)
      log::warn("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                " members for " + std::to_string(folds) + " folds; stratification is best-effort");
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(members);
    for (int i : members) fold[static_cast<std::size_t>(i)] = static_cast<int>(dealt++ % static_cast<std::size_t>(folds));
  }
  return fold;
}

struct FoldMetrics {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::string task;
  std::string id;  // channel or ensemble name
  std::vector<FoldMetrics> folds;
  double mean_macro_f1 = 0.0;
  double mean_accuracy = 0.0;
  ConfusionMatrix confusion;  // summed over folds
  nlohmann::json details = nlohmann::json::object();
};

/// Per-fold metrics from pooled out-of-fold predictions.
inline EvalReport make_report(const Task& task, const std::string& id, std::span<const int> y_true,
                              std::span<const int> y_pred, std::span<const int> fold_of, int folds) {
  if (y_true.size() != y_pred.size() || y_true.size() != fold_of.size())
    throw Error("make_report: length mismatch");
  EvalReport r{task.name, id, {}, 0.0, 0.0, confusion(y_true, y_pred, task.num_classes()), {}};
  for (int f = 0; f < folds; ++f) {
    std::vector<int> t, p;
    for (std::size_t i = 0; i < y_true.size(); ++i)
      if (fold_of[i] == f) {
        t.push_back(y_true[i]);
        p.push_back(y_pred[i]);
      }
    if (t.empty()) continue;
    r.folds.push_back({macro_f1(t, p, task.num_classes()), accuracy(t, p)});
  }
  for (const auto& fm : r.folds) {
    r.mean_macro_f1 += fm.macro_f1;
    r.mean_accuracy += fm.accuracy;
  }
  if (!r.folds.empty()) {
    r.mean_macro_f1 /= static_cast<double>(r.folds.size());
    r.mean_accuracy /= static_cast<double>(r.folds.size());
  }
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) folds.push_back({{"macro_f1", f.macro_f1}, {"accuracy", f.accuracy}});
  return {{"task", r.task},
          {"id", r.id},
          {"folds", folds},
          {"mean_macro_f1", r.mean_macro_f1},
          {"mean_accuracy", r.mean_accuracy},
          {"confusion", r.confusion},
          {"details", r.details}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.id = j.at("id").get<std::string>();
  for (const auto& f : j.at("folds"))
    r.folds.push_back({f.at("macro_f1").get<double>(), f.at("accuracy").get<double>()});
  r.mean_macro_f1 = j.at("mean_macro_f1").get<double>();
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  r.confusion = j.at("confusion").get<ConfusionMatrix>();
  if (j.contains("details")) r.details = j.at("details");
  return r;
}

inline constexpr int kReportSchemaVersion = 1;

struct RenderedReport {
  std::string text;
  nlohmann::json json;
};

/// Table in the style of the results tables: rows by mean macro-F1, descending
/// (ties by id), scores in percent.
inline RenderedReport render_report(std::vector<EvalReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
    if (a.mean_macro_f1 != b.mean_macro_f1) return a.mean_macro_f1 > b.mean_macro_f1;
    return a.id < b.id;
  });
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.id.size());

  std::ostringstream t;
  t << std::fixed << std::setprecision(2);
  t << std::left << std::setw(4) << "#" << std::setw(static_cast<int>(width) + 2) << "Model"
    << std::right << std::setw(9) << "F1" << std::setw(9) << "Acc." << '\n';
  nlohmann::json rows = nlohmann::json::array();
  int rank = 1;
  for (const auto& r : reports) {
    t << std::left << std::setw(4) << rank++ << std::setw(static_cast<int>(width) + 2) << r.id
      << std::right << std::setw(9) << 100.0 * r.mean_macro_f1 << std::setw(9)
      << 100.0 * r.mean_accuracy << '\n';
    rows.push_back(to_json(r));
  }
  std::string task = reports.empty() ? "" : reports.front().task;
  return {t.str(), {{"schema_version", kReportSchemaVersion}, {"task", task}, {"rows", rows}}};
}

}  // namespace mediaprof::eval
