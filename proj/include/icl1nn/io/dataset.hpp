#pragma once

// Prompt datasets, one row per token:
//   instance_id,token_index,x_1..x_d,y,is_query
// Context tokens have is_query=0; the query row has y=0 and is_query=1.

#include <string>
#include <vector>

#include "icl1nn/analysis.hpp"
#include "icl1nn/io/csv.hpp"

namespace icl1nn::io {

inline std::string dataset_text(const std::vector<ShiftInstance>& set) {
  if (set.empty()) return "";
  const int d = set.front().prompt.dim();
  std::vector<std::string> head{"instance_id", "token_index"};
  for (int i = 1; i <= d; ++i) head.push_back("x_" + std::to_string(i));
  head.push_back("y");
  head.push_back("is_query");
  std::string s = join(head) + "\n";
  for (std::size_t n = 0; n < set.size(); ++n) {
    const PromptSet& p = set[n].prompt;
    if (p.dim() != d) throw PreconditionViolation("dataset: mixed dimensions");
    for (int j = 0; j <= p.context_size(); ++j) {
      const bool q = j == p.context_size();
      std::vector<std::string> row{std::to_string(n), std::to_string(j)};
      for (int i = 0; i < d; ++i) row.push_back(fmt(q ? p.query[i] : p.xs(i, j)));
      row.push_back(fmt(q ? 0.0 : p.ys[j]));
      row.push_back(q ? "1" : "0");
      s += join(row) + "\n";
    }
  }
  return s;
}

/// Parses a dataset; every instance must list its context tokens in order
/// followed by exactly one query row.
inline std::vector<ShiftInstance> parse_dataset(const CsvTable& t, const std::string& path = "<dataset>") {
  const int d = static_cast<int>(t.header.size()) - 4;
  if (d < 2 || t.header[0] != "instance_id" || t.header[1] != "token_index" || t.header[2 + d] != "y" ||
      t.header[3 + d] != "is_query")
    throw ConfigError(path + ": header must be instance_id,token_index,x_1..x_d,y,is_query");
  for (int i = 0; i < d; ++i)
    if (t.header[2 + i] != "x_" + std::to_string(i + 1)) throw ConfigError(path + ": bad column " + t.header[2 + i]);
  std::vector<ShiftInstance> out;
  std::vector<Eigen::VectorXd> xs;
  std::vector<double> ys;
  long long current = -1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path + ": data row " + std::to_string(r + 1);
    const long long id = parse_int(row[0], where + " instance_id");
    const long long tok = parse_int(row[1], where + " token_index");
    if (xs.empty() && current != -1 && id == current) throw ConfigError(where + ": instance continues after its query");
    if (xs.empty()) current = id;
    if (id != current) throw ConfigError(where + ": instance " + std::to_string(current) + " has no query row");
    if (tok != static_cast<long long>(xs.size())) throw ConfigError(where + ": token_index out of order");
    Eigen::VectorXd x(d);
    for (int i = 0; i < d; ++i) x[i] = parse_double(row[2 + i], where + " x_" + std::to_string(i + 1));
    const double y = parse_double(row[2 + d], where + " y");
    const long long is_q = parse_int(row[3 + d], where + " is_query");
    if (is_q != 0 && is_q != 1) throw ConfigError(where + ": is_query must be 0 or 1");
    if (is_q == 1) {
      if (xs.empty()) throw ConfigError(where + ": query without context tokens");
      const int N = static_cast<int>(xs.size());
      PromptSet p(N, d);
      for (int j = 0; j < N; ++j) {
        p.xs.col(j) = xs[j];
        p.ys[j] = ys[j];
      }
      p.query = x;
      out.push_back({std::move(p), -1});
      xs.clear();
      ys.clear();
    } else {
      xs.push_back(x);
      ys.push_back(y);
    }
  }
  if (!xs.empty()) throw ConfigError(path + ": last instance has no query row");
  if (out.empty()) throw ConfigError(path + ": no instances");
  return out;
}

inline std::vector<ShiftInstance> read_dataset(const std::string& path) { return parse_dataset(read_csv(path), path); }

}  // namespace icl1nn::io
