#pragma once

// Model checkpoints as CSV:
//
//   layout_version,d,N,kind
//   1,<d>,<N>,full|diag
//   row,col,value          (kind=full: one line per active entry of W)
//   xi1,xi2                (kind=diag: a single line of values)

#include <string>
#include <variant>

#include "icl1nn/analysis.hpp"
#include "icl1nn/io/csv.hpp"

namespace icl1nn::io {

inline constexpr int kCheckpointLayout = 1;

struct Checkpoint {
  int d = 0;
  int N = 0;  // context length the model was trained for (informational)
  Model model;
};

inline std::string checkpoint_text(const Checkpoint& c) {
  std::string s = "layout_version,d,N,kind\n";
  if (const auto* dp = std::get_if<DiagonalParams>(&c.model)) {
    s += std::to_string(kCheckpointLayout) + "," + std::to_string(c.d) + "," + std::to_string(c.N) + ",diag\n";
    s += "xi1,xi2\n" + fmt(dp->xi1) + "," + fmt(dp->xi2) + "\n";
    return s;
  }
  const auto& W = std::get<AttentionWeights>(c.model);
  s += std::to_string(kCheckpointLayout) + "," + std::to_string(c.d) + "," + std::to_string(c.N) + ",full\n";
  s += "row,col,value\n";
  for (int r = 0; r < c.d + 2; ++r)
    for (int col = 0; col < c.d + 2; ++col)
      if (W.is_active(r, col))
        s += std::to_string(r) + "," + std::to_string(col) + "," + fmt(W.matrix()(r, col)) + "\n";
  return s;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& c) { write_text(path, checkpoint_text(c)); }

inline Checkpoint parse_checkpoint(const std::string& text, const std::string& path = "<checkpoint>") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto next = [&]() -> std::vector<std::string> {
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (!line.empty()) return split(line);
    }
    return {};
  };
  auto fail = [&](const std::string& msg) { return ConfigError(path + ":" + std::to_string(lineno) + ": " + msg); };
  if (next() != std::vector<std::string>{"layout_version", "d", "N", "kind"})
    throw fail("expected header 'layout_version,d,N,kind'");
  const auto meta = next();
  if (meta.size() != 4) throw fail("expected 4 metadata fields");
  if (parse_int(meta[0], "layout_version") != kCheckpointLayout)
    throw fail("unsupported layout_version " + meta[0]);
  Checkpoint c;
  c.d = static_cast<int>(parse_int(meta[1], "d"));
  c.N = static_cast<int>(parse_int(meta[2], "N"));
  if (c.d < 2) throw fail("d must be >= 2");
  if (c.N < 1) throw fail("N must be >= 1");
  if (meta[3] == "diag") {
    if (next() != std::vector<std::string>{"xi1", "xi2"}) throw fail("expected 'xi1,xi2'");
    const auto v = next();
    if (v.size() != 2) throw fail("expected two values");
    DiagonalParams dp{parse_double(v[0], "xi1"), parse_double(v[1], "xi2")};
    if (!std::isfinite(dp.xi1) || !std::isfinite(dp.xi2)) throw fail("non-finite parameter");
    c.model = dp;
  } else if (meta[3] == "full") {
    if (next() != std::vector<std::string>{"row", "col", "value"}) throw fail("expected 'row,col,value'");
    AttentionWeights W(c.d);
    int count = 0;
    for (auto v = next(); !v.empty(); v = next()) {
      if (v.size() != 3) throw fail("expected row,col,value");
      const long long r = parse_int(v[0], "row"), col = parse_int(v[1], "col");
      if (r < 0 || col < 0 || r >= c.d + 2 || col >= c.d + 2) throw fail("entry out of range");
      if (!W.is_active(static_cast<int>(r), static_cast<int>(col))) throw fail("entry in the inactive column");
      const double x = parse_double(v[2], "value");
      if (!std::isfinite(x)) throw fail("non-finite value");
      W.matrix()(r, col) = x;
      ++count;
    }
    if (count != (c.d + 2) * (c.d + 1)) throw fail("expected " + std::to_string((c.d + 2) * (c.d + 1)) + " entries");
    c.model = W;
  } else {
    throw fail("unknown kind '" + meta[3] + "'");
  }
  return c;
}

inline Checkpoint read_checkpoint(const std::string& path) { return parse_checkpoint(read_text(path), path); }

}  // namespace icl1nn::io
