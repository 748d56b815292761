#pragma once
// Similarity, in-batch contrastive loss, hard-positive selection and the
// multi-alternative contrastive loss, each with analytic gradients.
//
// Layout conventions:
//   S        N x d    premise embeddings, one per row
//   G        N x d    alternative embeddings; row i is the positive of S row i
//   G_multi  (N*k) x d  candidate alternatives; rows i*k .. i*k+k-1 belong to sample i
//
// All templates accept float or double scalars.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mico/errors.hpp"

namespace mico {

enum class SimilarityKind { cosine, dot };

inline std::string to_string(SimilarityKind k) { return k == SimilarityKind::cosine ? "cosine" : "dot"; }

inline SimilarityKind parse_similarity(const std::string& s) {
  if (s == "cosine") return SimilarityKind::cosine;
  if (s == "dot") return SimilarityKind::dot;
  throw ConfigError("unknown similarity '" + s + "' (expected cosine or dot)");
}

struct LossConfig {
  double tau = 0.07;
  int k = 1;
  SimilarityKind kind = SimilarityKind::cosine;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a positive finite number");
    if (k < 1) throw ConfigError("k must be >= 1");
  }
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// ---- similarity -----------------------------------------------------------

template <typename DA, typename DB>
typename DA::Scalar similarity(const Eigen::MatrixBase<DA>& s, const Eigen::MatrixBase<DB>& g, SimilarityKind kind) {
  using T = typename DA::Scalar;
  if (s.size() != g.size())
    throw InputError("similarity: dimension mismatch (" + std::to_string(s.size()) + " vs " + std::to_string(g.size()) + ")");
  T dot = s.dot(g);
  if (kind == SimilarityKind::dot) return dot;
  T ns = s.norm();
  T ng = g.norm();
  if (ns == T(0) || ng == T(0)) throw InputError("cosine similarity with a zero vector");
  return dot / (ns * ng);
}

// sims(i, j) = sim(A row i, B row j)
template <typename T>
Mat<T> similarity_matrix(const Mat<T>& A, const Mat<T>& B, SimilarityKind kind) {
  if (A.cols() != B.cols())
    throw InputError("similarity: dimension mismatch (" + std::to_string(A.cols()) + " vs " + std::to_string(B.cols()) + ")");
  if (kind == SimilarityKind::dot) return A * B.transpose();
  Vec<T> na = A.rowwise().norm();
  Vec<T> nb = B.rowwise().norm();
  if ((na.array() == T(0)).any() || (nb.array() == T(0)).any())
    throw InputError("cosine similarity with a zero vector");
  Mat<T> out = A * B.transpose();
  out.array().colwise() /= na.array();
  out.array().rowwise() /= nb.transpose().array();
  return out;
}

// Chains d loss / d sims back to the embedding rows of A and B.
template <typename T>
void similarity_matrix_backward(const Mat<T>& A, const Mat<T>& B, SimilarityKind kind, const Mat<T>& grad_sims,
                                Mat<T>& grad_A, Mat<T>& grad_B) {
  grad_A.setZero(A.rows(), A.cols());
  grad_B.setZero(B.rows(), B.cols());
  if (kind == SimilarityKind::dot) {
    grad_A = grad_sims * B;
    grad_B = grad_sims.transpose() * A;
    return;
  }
  Vec<T> na = A.rowwise().norm();
  Vec<T> nb = B.rowwise().norm();
  Mat<T> An = A;
  An.array().colwise() /= na.array();
  Mat<T> Bn = B;
  Bn.array().colwise() /= nb.array();
  Mat<T> cos = An * Bn.transpose();
  // d cos_ij / d a_i = (bn_j - cos_ij an_i) / |a_i|
  Vec<T> w_a = (grad_sims.array() * cos.array()).rowwise().sum();
  grad_A = grad_sims * Bn - (An.array().colwise() * w_a.array()).matrix();
  grad_A.array().colwise() /= na.array();
  Vec<T> w_b = (grad_sims.array() * cos.array()).colwise().sum().transpose();
  grad_B = grad_sims.transpose() * An - (Bn.array().colwise() * w_b.array()).matrix();
  grad_B.array().colwise() /= nb.array();
}

// ---- numerics --------------------------------------------------------------

// Max-shifted log-sum-exp over a row.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using T = typename Derived::Scalar;
  T m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

template <typename T>
struct LossResult {
  T value = T(0);
  Mat<T> grad_premises;      // same shape as S (empty unless requested)
  Mat<T> grad_alternatives;  // same shape as G / G_multi
  std::vector<int> hard_positive;  // per sample, index into its k candidates (mico loss only)
};

// ---- in-batch contrastive loss -----------------------------------------------

// mean_i [ -sims(i,i)/tau + LSE_j sims(i,j)/tau ]. The positive sits in its own denominator.
template <typename T>
T info_nce_from_sims(const Mat<T>& sims, T tau, Mat<T>* grad_sims = nullptr) {
  const auto n = sims.rows();
  if (n < 2) throw InputError("contrastive loss needs a batch of at least 2 (got " + std::to_string(n) + ")");
  if (sims.cols() != n) throw InputError("info_nce: similarity matrix must be square");
  if (grad_sims) grad_sims->setZero(n, n);
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec<T> logits = sims.row(i).transpose() / tau;
    T lse = log_sum_exp(logits);
    total += lse - logits(i);
    if (grad_sims) {
      Vec<T> p = (logits.array() - lse).exp();
      p(i) -= T(1);
      grad_sims->row(i) = p.transpose() / (tau * T(n));
    }
  }
  return total / T(n);
}

template <typename T>
LossResult<T> info_nce(const Mat<T>& S, const Mat<T>& G, const LossConfig& cfg, bool with_grad = false) {
  cfg.validate();
  if (S.rows() != G.rows() || S.cols() != G.cols()) throw InputError("info_nce: S and G must have the same shape");
  Mat<T> sims = similarity_matrix<T>(S, G, cfg.kind);
  LossResult<T> r;
  Mat<T> gs;
  r.value = info_nce_from_sims<T>(sims, T(cfg.tau), with_grad ? &gs : nullptr);
  if (with_grad) similarity_matrix_backward<T>(S, G, cfg.kind, gs, r.grad_premises, r.grad_alternatives);
  return r;
}

// ---- hard positive -----------------------------------------------------------

template <typename T>
struct HardPositive {
  int index = 0;
  Vec<T> embedding;
};

// Index of the minimum value; ties go to the lowest index.
template <typename Derived>
int argmin_first(const Eigen::DenseBase<Derived>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) < v(best)) best = static_cast<int>(i);
  return best;
}

// The candidate least similar to the premise.
template <typename T>
HardPositive<T> select_hard_positive(const Vec<T>& s, const Mat<T>& candidates, const LossConfig& cfg) {
  if (candidates.rows() < 1) throw InputError("select_hard_positive: no candidates");
  if (candidates.cols() != s.size()) throw InputError("select_hard_positive: dimension mismatch");
  Vec<T> sims(candidates.rows());
  for (Eigen::Index o = 0; o < candidates.rows(); ++o) sims(o) = similarity(s, candidates.row(o).transpose(), cfg.kind);
  int idx = argmin_first(sims);
  return {idx, candidates.row(idx).transpose()};
}

// ---- multi-alternative contrastive loss --------------------------------------

// sims is N x (N*k): sims(i, j*k+o) = sim(s_i, g_{j,o}).
//   L_i = -l_i,p + log( exp(l_i,p) + sum_{j != i} sum_o exp(l_i,(j,o)) ),  l = sim / tau
// with p = hard[i]. The sample's own non-selected candidates are neither
// positive nor negative for it.
template <typename T>
T mico_loss_from_sims(const Mat<T>& sims, const std::vector<int>& hard, int k, T tau, Mat<T>* grad_sims = nullptr) {
  const auto n = sims.rows();
  if (n < 2) throw InputError("contrastive loss needs a batch of at least 2 (got " + std::to_string(n) + ")");
  if (k < 1 || sims.cols() != n * k) throw InputError("mico_loss: similarity matrix must be N x N*k");
  if (static_cast<Eigen::Index>(hard.size()) != n) throw InputError("mico_loss: one hard positive per sample");
  if (grad_sims) grad_sims->setZero(n, n * k);
  const Eigen::Index terms = 1 + (n - 1) * k;
  Vec<T> logits(terms);
  std::vector<Eigen::Index> col(static_cast<std::size_t>(terms));
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index t = 0;
    col[0] = i * k + hard[static_cast<std::size_t>(i)];
    logits(t++) = sims(i, col[0]) / tau;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      for (int o = 0; o < k; ++o) {
        col[static_cast<std::size_t>(t)] = j * k + o;
        logits(t++) = sims(i, j * k + o) / tau;
      }
    }
    T lse = log_sum_exp(logits);
    total += lse - logits(0);
    if (grad_sims) {
      for (Eigen::Index u = 0; u < terms; ++u) {
        T q = std::exp(logits(u) - lse) - (u == 0 ? T(1) : T(0));
        (*grad_sims)(i, col[static_cast<std::size_t>(u)]) += q / (tau * T(n));
      }
    }
  }
  return total / T(n);
}

// Hard positives are chosen per sample by minimum similarity and treated as a
// constant choice: gradients reach only the selected candidate (and every
// candidate of other samples, as negatives).
template <typename T>
LossResult<T> mico_loss(const Mat<T>& S, const Mat<T>& G_multi, const LossConfig& cfg, bool with_grad = false) {
  cfg.validate();
  const auto n = S.rows();
  const int k = cfg.k;
  if (n < 2) throw InputError("contrastive loss needs a batch of at least 2 (got " + std::to_string(n) + ")");
  if (G_multi.rows() != n * k || G_multi.cols() != S.cols())
    throw InputError("mico_loss: G_multi must be (N*k) x d with N=" + std::to_string(n) + ", k=" + std::to_string(k));
  Mat<T> sims = similarity_matrix<T>(S, G_multi, cfg.kind);
  LossResult<T> r;
  r.hard_positive.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) r.hard_positive[static_cast<std::size_t>(i)] = argmin_first(sims.row(i).segment(i * k, k));
  Mat<T> gs;
  r.value = mico_loss_from_sims<T>(sims, r.hard_positive, k, T(cfg.tau), with_grad ? &gs : nullptr);
  if (with_grad) similarity_matrix_backward<T>(S, G_multi, cfg.kind, gs, r.grad_premises, r.grad_alternatives);
  return r;
}

}  // namespace mico
