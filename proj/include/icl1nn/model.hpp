#pragma once

// Token embedding, the merged key-query attention weights with their 3x3 block
// structure, and the single softmax-attention read-out.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>

#include "icl1nn/data.hpp"
#include "icl1nn/errors.hpp"

namespace icl1nn {

/// (d+2) x (N+1) token matrix. Column j < N is (x_j, y_j, 0); the last
/// column is (query, 0, 1).
struct EmbeddingMatrix {
  Eigen::MatrixXd entries;

  int dim() const noexcept { return static_cast<int>(entries.rows()) - 2; }
  int context_size() const noexcept { return static_cast<int>(entries.cols()) - 1; }

  /// Reads the prompt back out of the token columns.
  PromptSet to_prompt() const {
    const int d = dim(), N = context_size();
    return PromptSet(entries.topLeftCorner(d, N), entries.block(d, 0, 1, N).transpose(),
                     entries.col(N).head(d));
  }
};

inline EmbeddingMatrix build_embedding(const PromptSet& p) {
  const int d = p.dim(), N = p.context_size();
  EmbeddingMatrix H{Eigen::MatrixXd::Zero(d + 2, N + 1)};
  H.entries.topLeftCorner(d, N) = p.xs;
  H.entries.block(d, 0, 1, N) = p.ys.transpose();
  H.entries.col(N).head(d) = p.query;
  H.entries(d + 1, N) = 1.0;
  return H;
}

/// Merged key-query matrix W of size (d+2) x (d+2).
///
/// Block rows/columns are {0..d-1}, {d}, {d+1}. The block views alias the
/// underlying storage. Column d (W12, W22, W32) multiplies the query's zero
/// label slot and never reaches the output.
class AttentionWeights {
 public:
  AttentionWeights() = default;
  explicit AttentionWeights(int d) : m_(Eigen::MatrixXd::Zero(d + 2, d + 2)) { require_dimension(d); }
  explicit AttentionWeights(Eigen::MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() < 4)
      throw InvalidDimension("AttentionWeights: need a square matrix of size d+2 >= 4");
  }

  /// Structured initialization: zero except the query self-attention entry -sigma.
  static AttentionWeights initial(int d, double sigma) {
    AttentionWeights w(d);
    w.w33() = -sigma;
    return w;
  }

  int dim() const noexcept { return static_cast<int>(m_.rows()) - 2; }
  Eigen::MatrixXd& matrix() noexcept { return m_; }
  const Eigen::MatrixXd& matrix() const noexcept { return m_; }

  auto w11() { return m_.topLeftCorner(dim(), dim()); }
  auto w11() const { return m_.topLeftCorner(dim(), dim()); }
  auto w12() { return m_.block(0, dim(), dim(), 1); }
  auto w12() const { return m_.block(0, dim(), dim(), 1); }
  auto w13() { return m_.block(0, dim() + 1, dim(), 1); }
  auto w13() const { return m_.block(0, dim() + 1, dim(), 1); }
  auto w21() { return m_.block(dim(), 0, 1, dim()); }
  auto w21() const { return m_.block(dim(), 0, 1, dim()); }
  auto w31() { return m_.block(dim() + 1, 0, 1, dim()); }
  auto w31() const { return m_.block(dim() + 1, 0, 1, dim()); }
  double& w22() { return m_(dim(), dim()); }
  double w22() const { return m_(dim(), dim()); }
  double& w23() { return m_(dim(), dim() + 1); }
  double w23() const { return m_(dim(), dim() + 1); }
  double& w32() { return m_(dim() + 1, dim()); }
  double w32() const { return m_(dim() + 1, dim()); }
  double& w33() { return m_(dim() + 1, dim() + 1); }
  double w33() const { return m_(dim() + 1, dim() + 1); }

  /// False for entries of the second block column.
  bool is_active(int /*row*/, int col) const noexcept { return col != dim(); }

 private:
  Eigen::MatrixXd m_;
};

/// Reduced state W = diag(xi1 I_d, 0, -xi2).
struct DiagonalParams {
  double xi1 = 0.0;
  double xi2 = 0.0;

  AttentionWeights expand(int d) const {
    AttentionWeights w(d);
    w.w11().diagonal().setConstant(xi1);
    w.w33() = -xi2;
    return w;
  }
};

/// Attention of the query column over all N+1 tokens.
struct SoftmaxWeights {
  Eigen::VectorXd q;

  int context_size() const noexcept { return static_cast<int>(q.size()) - 1; }
  double query_weight() const { return q[q.size() - 1]; }
};

/// In-place softmax with max-logit subtraction.
inline void softmax_inplace(Eigen::Ref<Eigen::VectorXd> s) {
  if (!s.allFinite()) throw NumericOverflow("attention logits are not finite");
  const double m = s.maxCoeff();
  s = (s.array() - m).exp();
  s /= s.sum();
}

inline void check_shapes(const PromptSet& p, const AttentionWeights& W) {
  if (W.dim() != p.dim())
    throw InvalidDimension("weights are for d=" + std::to_string(W.dim()) + " but prompt has d=" +
                           std::to_string(p.dim()));
}

/// Logits h_j . (W h_{N+1}) for all tokens, written into `s` (size N+1).
/// `v` is scratch of size d+2.
inline void attention_logits(const PromptSet& p, const Eigen::MatrixXd& W, Eigen::VectorXd& v,
                             Eigen::VectorXd& s) {
  const int d = p.dim(), N = p.context_size();
  v.noalias() = W.leftCols(d) * p.query;
  v += W.col(d + 1);
  s.resize(N + 1);
  s.head(N).noalias() = p.xs.transpose() * v.head(d);
  s.head(N) += v[d] * p.ys;
  s[N] = p.query.dot(v.head(d)) + v[d + 1];
}

inline SoftmaxWeights attention_q(const PromptSet& p, const AttentionWeights& W) {
  check_shapes(p, W);
  Eigen::VectorXd v, s;
  attention_logits(p, W.matrix(), v, s);
  softmax_inplace(s);
  return {std::move(s)};
}

/// Softmax weights at a diagonal point, without forming W: logits xi1 <x_j, q>
/// for context tokens and xi1 - xi2 for the query token.
inline void diag_weights(const PromptSet& p, const DiagonalParams& dp, Eigen::VectorXd& t,
                         Eigen::VectorXd& s) {
  const int N = p.context_size();
  t.noalias() = p.xs.transpose() * p.query;
  s.resize(N + 1);
  s.head(N) = dp.xi1 * t;
  s[N] = dp.xi1 - dp.xi2;
  softmax_inplace(s);
}

inline SoftmaxWeights attention_q_diag(const PromptSet& p, const DiagonalParams& dp) {
  Eigen::VectorXd t, s;
  diag_weights(p, dp, t, s);
  return {std::move(s)};
}

/// y_hat = sum_{j<N} q_j y_j (the query token carries label 0).
inline double forward(const PromptSet& p, const AttentionWeights& W) {
  const auto q = attention_q(p, W);
  return q.q.head(p.context_size()).dot(p.ys);
}

inline double forward_diag(const PromptSet& p, const DiagonalParams& dp) {
  const auto q = attention_q_diag(p, dp);
  return q.q.head(p.context_size()).dot(p.ys);
}

/// Entry (d, N) of H softmax(H^T W H), with the column-wise softmax taken over
/// the whole matrix. Used only to cross-check forward().
inline double forward_reference(const PromptSet& p, const AttentionWeights& W) {
  check_shapes(p, W);
  const Eigen::MatrixXd H = build_embedding(p).entries;
  Eigen::MatrixXd A = H.transpose() * W.matrix() * H;
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    Eigen::VectorXd col = A.col(c);
    softmax_inplace(col);
    A.col(c) = col;
  }
  const Eigen::MatrixXd out = H * A;
  return out(p.dim(), p.context_size());
}

/// Per-prompt loss 1/2 (y_hat - y_{i*})^2.
inline double sample_loss(const PromptSet& p, const AttentionWeights& W) {
  const double r = forward(p, W) - p.ys[nearest_index(p)];
  return 0.5 * r * r;
}

}  // namespace icl1nn
