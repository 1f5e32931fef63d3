#pragma once

// Unified pair-similarity loss
//
//   L_i = -log( e^{g s^p_i} / (e^{g s^p_i} + sum_j e^{g s^n_j}) )
//       =  log( 1 + sum_j e^{g (s^n_j - s^p_i)} ),      L = mean_i L_i
//
// Negatives come in two groups: per-anchor ones (the cl negatives N^cl_i) and
// a list shared by every anchor (the filtered ml negatives, duplicated across
// the batch). The plain form is the special case with only shared negatives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "unpg/error.hpp"
#include "unpg/margins.hpp"
#include "unpg/pairgen.hpp"
#include "unpg/sphere.hpp"

namespace unpg {

inline constexpr double kDefaultGamma = 64.0;

struct LossConfig {
  double gamma = kDefaultGamma;
  MarginConfig margin{};
  FilterConfig whisker{};
  bool unpg_enabled = true;
  /// Applies the whisker filter to ml negatives. Off only for the
  /// unfiltered-UNPG divergence experiment.
  bool filter_enabled = true;
};

inline void validate(const LossConfig& cfg) {
  if (!(cfg.gamma > 0.0) || !std::isfinite(cfg.gamma)) {
    throw Error(ErrorCode::ConfigInvalid, "loss.gamma must be a positive finite number");
  }
  validate(cfg.margin);
  if (!(cfg.whisker.whisker_r >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "loss.whisker_r must be nonnegative");
}

struct LossOutput {
  double value = 0.0;
  std::vector<double> per_anchor;
  std::vector<double> softmax_prob;

  std::vector<double> grad_pos;          // dL/ds^p_i, K entries
  Matrix grad_neg_anchor;                // dL/ds^n for per-anchor negatives, K x L_a
  std::vector<double> grad_neg_shared;   // dL/ds^n for shared negatives, summed over anchors

  // Forward artifacts consumed by loss_backward.
  std::vector<double> pos_scores;
  Matrix anchor_neg_scores;
  std::vector<double> shared_neg_scores;
  std::vector<double> log_normalizer;    // log(e^{g s^p_i} + sum_j e^{g s^n_j})
};

struct LossGradients {
  std::vector<double> grad_pos;
  Matrix grad_neg_anchor;
  std::vector<double> grad_neg_shared;
};

/// Gradients of the mean loss with respect to every score:
///   dL/ds^p_i = -g (1 - P_i) / K,   dL/ds^n_j += g e^{g s^n_j - lse_i} / K.
inline LossGradients loss_backward(const LossOutput& out, double gamma) {
  const std::size_t k_anchors = out.pos_scores.size();
  const std::size_t la = out.anchor_neg_scores.cols();
  const double scale = gamma / static_cast<double>(k_anchors);
  LossGradients g;
  g.grad_pos.assign(k_anchors, 0.0);
  g.grad_neg_anchor = Matrix(k_anchors, la);
  g.grad_neg_shared.assign(out.shared_neg_scores.size(), 0.0);
  for (std::size_t i = 0; i < k_anchors; ++i) {
    const double lse = out.log_normalizer[i];
    double neg_mass = 0.0;
    for (std::size_t j = 0; j < la; ++j) {
      const double w = std::exp(gamma * out.anchor_neg_scores(i, j) - lse);
      neg_mass += w;
      g.grad_neg_anchor(i, j) = scale * w;
    }
    for (std::size_t j = 0; j < out.shared_neg_scores.size(); ++j) {
      const double w = std::exp(gamma * out.shared_neg_scores[j] - lse);
      neg_mass += w;
      g.grad_neg_shared[j] += scale * w;
    }
    // 1 - P_i summed from the negative side keeps precision when P_i ~ 1.
    g.grad_pos[i] = -scale * neg_mass;
  }
  return g;
}

namespace detail {

inline void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, std::string("nonfinite score in ") + what);
  }
}

/// Per-anchor term over negatives given as anchor row + shared list, in that
/// order. Returns {loss_i, lse_i}.
inline std::pair<double, double> anchor_term(double pos, std::span<const double> anchor_negs,
                                             std::span<const double> shared_negs, double gamma) {
  const double a = gamma * pos;
  double top = a;
  for (double s : anchor_negs) top = std::max(top, gamma * s);
  for (double s : shared_negs) top = std::max(top, gamma * s);
  if (top == a) {
    double tail = 0.0;
    for (double s : anchor_negs) tail += std::exp(gamma * s - a);
    for (double s : shared_negs) tail += std::exp(gamma * s - a);
    const double loss = std::log1p(tail);
    return {loss, a + loss};
  }
  double sum = std::exp(a - top);
  for (double s : anchor_negs) sum += std::exp(gamma * s - top);
  for (double s : shared_negs) sum += std::exp(gamma * s - top);
  const double lse = top + std::log(sum);
  return {lse - a, lse};
}

}  // namespace detail

/// Shared implementation of both loss forms. `anchor_negs` has one row per
/// anchor (or zero columns).
inline LossOutput unified_forward(std::span<const double> pos_scores, const Matrix& anchor_negs,
                                  std::span<const double> shared_negs, double gamma) {
  if (pos_scores.empty()) throw Error(ErrorCode::EmptyPositives, "loss needs at least one anchor");
  if (!(gamma > 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be positive");
  if (anchor_negs.cols() > 0 && anchor_negs.rows() != pos_scores.size()) {
    throw Error(ErrorCode::DimensionMismatch, "per-anchor negatives need one row per positive score");
  }
  detail::check_finite(pos_scores, "positives");
  detail::check_finite(anchor_negs.data(), "per-anchor negatives");
  detail::check_finite(shared_negs, "shared negatives");

  const std::size_t k_anchors = pos_scores.size();
  LossOutput out;
  out.pos_scores.assign(pos_scores.begin(), pos_scores.end());
  out.anchor_neg_scores = anchor_negs.cols() > 0 ? anchor_negs : Matrix(k_anchors, 0);
  out.shared_neg_scores.assign(shared_negs.begin(), shared_negs.end());
  out.per_anchor.resize(k_anchors);
  out.softmax_prob.resize(k_anchors);
  out.log_normalizer.resize(k_anchors);

  double total = 0.0;
  for (std::size_t i = 0; i < k_anchors; ++i) {
    const auto [loss, lse] =
        detail::anchor_term(pos_scores[i], out.anchor_neg_scores.row(i), out.shared_neg_scores, gamma);
    out.per_anchor[i] = loss;
    out.log_normalizer[i] = lse;
    out.softmax_prob[i] = std::exp(-loss);
    total += loss;
  }
  out.value = total / static_cast<double>(k_anchors);

  LossGradients g = loss_backward(out, gamma);
  out.grad_pos = std::move(g.grad_pos);
  out.grad_neg_anchor = std::move(g.grad_neg_anchor);
  out.grad_neg_shared = std::move(g.grad_neg_shared);
  return out;
}

/// K positive scores against one negative list shared by all anchors.
inline LossOutput unified_loss(std::span<const double> pos_scores, std::span<const double> neg_scores, double gamma) {
  return unified_forward(pos_scores, Matrix{}, neg_scores, gamma);
}

/// Row i of `cl_neg` holds anchor i's class-weight negatives; `ml_neg` is the
/// filtered sample-pair list added to every anchor's normalizer.
inline LossOutput unified_loss_unpg(std::span<const double> pos_scores, const Matrix& cl_neg,
                                    std::span<const double> ml_neg, double gamma) {
  return unified_forward(pos_scores, cl_neg, ml_neg, gamma);
}

// ---------------------------------------------------------------------------
// Composition over a batch: raw embeddings and class weights in, loss and
// gradients with respect to the raw (unnormalized) parameters out.

struct BatchForward {
  std::vector<UnitVector> embeddings;   // normalized batch rows
  std::vector<UnitVector> weights;      // normalized class rows
  Matrix cos_cl;                        // N x C cosines
  PairIndexSet ml_negatives;            // every ml negative of the batch
  PairIndexSet ml_kept;                 // survivors of the whisker filter
  std::vector<double> injected_kept;    // synthetic constant scores that survived
  std::size_t injected_total = 0;
  LossOutput loss;
};

struct ParameterGradients {
  Matrix embeddings;  // N x d
  Matrix weights;     // C x d
};

/// Forward pass for a batch. `injected_ml` are extra constant ml negative
/// scores (no parameters behind them) appended before filtering; used by the
/// noisy-negative experiments.
inline BatchForward batch_forward(const Matrix& raw_embeddings, std::span<const std::size_t> labels,
                                  const Matrix& raw_weights, const LossConfig& cfg,
                                  std::span<const double> injected_ml = {}) {
  if (raw_embeddings.rows() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one label per embedding row required");
  }
  if (raw_embeddings.cols() != raw_weights.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "embedding and class-weight dimensions differ");
  }
  const std::size_t n = labels.size();
  const std::size_t c = raw_weights.rows();
  BatchForward f;
  f.embeddings = normalize_rows(raw_embeddings);
  f.weights = normalize_rows(raw_weights);

  f.cos_cl = Matrix(n, c);
  std::vector<double> pos(n);
  Matrix cl_neg(n, c > 0 ? c - 1 : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const ClPairs cl = clpg(i, labels, c);
    for (std::size_t j = 0; j < c; ++j) f.cos_cl(i, j) = cos_sim(f.embeddings[i], f.weights[j]);
    pos[i] = positive_score(f.cos_cl(i, labels[i]), cfg.margin);
    std::size_t k = 0;
    for (const auto& p : cl.negatives) cl_neg(i, k++) = f.cos_cl(i, p.right);
  }

  std::vector<double> ml_scores;
  if (cfg.unpg_enabled) {
    f.ml_negatives = mlpg(labels).negatives;
    std::vector<double> sims;
    sims.reserve(f.ml_negatives.size() + injected_ml.size());
    for (const auto& p : f.ml_negatives) sims.push_back(cos_sim(f.embeddings[p.left], f.embeddings[p.right]));
    sims.insert(sims.end(), injected_ml.begin(), injected_ml.end());
    f.injected_total = injected_ml.size();
    std::vector<bool> keep(sims.size(), true);
    if (cfg.filter_enabled && !sims.empty()) keep = filter_noise(sims, cfg.whisker);
    const std::size_t real = f.ml_negatives.size();
    for (std::size_t k = 0; k < sims.size(); ++k) {
      if (!keep[k]) continue;
      if (k < real) {
        f.ml_kept.pairs.push_back(f.ml_negatives.pairs[k]);
        ml_scores.push_back(sims[k]);
      } else {
        f.injected_kept.push_back(sims[k]);
      }
    }
    ml_scores.insert(ml_scores.end(), f.injected_kept.begin(), f.injected_kept.end());
  }

  f.loss = unified_loss_unpg(pos, cl_neg, ml_scores, cfg.gamma);
  return f;
}

namespace detail {

inline void accumulate_pair(Matrix& ga, std::size_t ra, std::span<const double> a, Matrix& gb, std::size_t rb,
                            std::span<const double> b, double upstream) {
  if (upstream == 0.0) return;
  const auto [da, db] = cos_sim_grad(a, b);
  auto row_a = ga.row(ra);
  auto row_b = gb.row(rb);
  for (std::size_t k = 0; k < da.size(); ++k) {
    row_a[k] += upstream * da[k];
    row_b[k] += upstream * db[k];
  }
}

}  // namespace detail

/// Chains the score gradients of `fwd.loss` through the margin and the cosine
/// into gradients for the raw embedding and class-weight rows.
inline ParameterGradients embedding_backward(const BatchForward& fwd, const Matrix& raw_embeddings,
                                             std::span<const std::size_t> labels, const Matrix& raw_weights,
                                             const LossConfig& cfg) {
  const std::size_t n = raw_embeddings.rows();
  const std::size_t c = raw_weights.rows();
  ParameterGradients g{Matrix(n, raw_embeddings.cols()), Matrix(c, raw_weights.cols())};
  const LossOutput& loss = fwd.loss;

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = labels[i];
    const double dpos = loss.grad_pos[i] * positive_score_slope(fwd.cos_cl(i, y), cfg.margin);
    detail::accumulate_pair(g.embeddings, i, raw_embeddings.row(i), g.weights, y, raw_weights.row(y), dpos);
    std::size_t k = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == y) continue;
      detail::accumulate_pair(g.embeddings, i, raw_embeddings.row(i), g.weights, j, raw_weights.row(j),
                              loss.grad_neg_anchor(i, k++));
    }
  }
  // Shared list = kept real ml pairs followed by kept injected constants.
  for (std::size_t k = 0; k < fwd.ml_kept.size(); ++k) {
    const auto& p = fwd.ml_kept.pairs[k];
    detail::accumulate_pair(g.embeddings, p.left, raw_embeddings.row(p.left), g.embeddings, p.right,
                            raw_embeddings.row(p.right), loss.grad_neg_shared[k]);
  }
  return g;
}

}  // namespace unpg
