#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "common.hpp"

namespace mediaprof {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense per-node representation. Row i belongs to domains[i].
struct EmbeddingMatrix {
  std::string provenance;  // node2vec | gcn | sage | external channel name
  std::vector<std::string> domains;
  RowMatrix values;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

/// CSV with header `domain,<prefix>0..<prefix>{d-1}`.
inline void write_matrix_csv(const std::vector<std::string>& domains, const RowMatrix& values,
                             std::ostream& out, const std::string& prefix) {
  if (static_cast<Eigen::Index>(domains.size()) != values.rows())
    throw Error("write_matrix_csv: row count mismatch");
  out << "domain";
  for (Eigen::Index j = 0; j < values.cols(); ++j) out << ',' << prefix << j;
  out << '\n';
  for (std::size_t i = 0; i < domains.size(); ++i) {
    out << domains[i];
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      out << ',' << format_double(values(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
}

struct MatrixCsv {
  std::vector<std::string> domains;
  RowMatrix values;
};

inline MatrixCsv read_matrix_csv(std::istream& in, const std::string& what) {
  const auto t = read_csv(in, what);
  if (t.header.empty() || t.header[0] != "domain")
    throw ParseError(what + ": first column must be 'domain'");
  MatrixCsv m;
  const auto d = static_cast<Eigen::Index>(t.header.size() - 1);
  m.values.resize(static_cast<Eigen::Index>(t.rows.size()), d);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    m.domains.push_back(t.rows[i][0]);
    for (Eigen::Index j = 0; j < d; ++j)
      m.values(static_cast<Eigen::Index>(i), j) = parse_double(t.rows[i][j + 1]);
  }
  return m;
}

inline void write_embedding(const EmbeddingMatrix& e, const std::string& csv_path,
                            const std::string& sidecar_path, const nlohmann::json& sidecar) {
  auto out = open_output(csv_path);
  write_matrix_csv(e.domains, e.values, out, "e");
  auto meta = open_output(sidecar_path);
  nlohmann::json j = sidecar;
  j["provenance"] = e.provenance;
  j["rows"] = e.rows();
  j["dim"] = e.dim();
  meta << j.dump(2) << '\n';
}

inline EmbeddingMatrix read_embedding(const std::string& csv_path, const std::string& provenance) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error("cannot open " + csv_path);
  auto m = read_matrix_csv(in, csv_path);
  return {provenance, std::move(m.domains), std::move(m.values)};
}

}  // namespace mediaprof
