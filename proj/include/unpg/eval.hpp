#pragma once

// Verification / identification metrics and the distribution-overlap
// diagnostics used to judge how close a feature space is to separating every
// positive pair from every negative pair (min positive > max negative).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unpg/error.hpp"
#include "unpg/pairgen.hpp"
#include "unpg/sphere.hpp"

namespace unpg {

struct ScoredPairs {
  std::vector<double> positive_scores;
  std::vector<double> negative_scores;
};

struct TarAtFar {
  double far_target = 0.0;
  double tar = 0.0;
  double threshold = 0.0;  // accept iff score > threshold
};

/// For each target f the threshold is the smallest tau with
/// #{neg > tau} / |neg| <= f, and TAR = #{pos > tau} / |pos|.
inline std::vector<TarAtFar> tar_at_far(const ScoredPairs& pairs, std::span<const double> far_targets) {
  if (pairs.negative_scores.empty()) throw Error(ErrorCode::EmptyNegatives, "tar_at_far needs negative scores");
  if (pairs.positive_scores.empty()) throw Error(ErrorCode::EmptyPositives, "tar_at_far needs positive scores");
  std::vector<double> neg = pairs.negative_scores;
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::vector<double> pos = pairs.positive_scores;
  std::sort(pos.begin(), pos.end());
  const auto n_neg = static_cast<double>(neg.size());

  std::vector<TarAtFar> out;
  for (double f : far_targets) {
    if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorCode::InvalidArgument, "FAR target outside [0,1]");
    // Largest count of false accepts allowed by f.
    std::size_t allowed = 0;
    while (allowed < neg.size() && static_cast<double>(allowed + 1) / n_neg <= f) ++allowed;
    double tau = -std::numeric_limits<double>::infinity();
    if (allowed < neg.size()) tau = neg[allowed];
    const auto above = static_cast<std::size_t>(pos.end() - std::upper_bound(pos.begin(), pos.end(), tau));
    out.push_back({f, static_cast<double>(above) / static_cast<double>(pos.size()), tau});
  }
  return out;
}

struct VerificationResult {
  double accuracy = 0.0;
  double threshold = 0.0;  // accept iff score >= threshold
};

/// Best accuracy over thresholds placed below all scores, at midpoints of
/// consecutive distinct scores, and above all scores. Ties go to the smallest
/// threshold.
inline VerificationResult verification_accuracy(const ScoredPairs& pairs) {
  if (pairs.positive_scores.empty() || pairs.negative_scores.empty()) {
    throw Error(ErrorCode::EmptyInput, "verification_accuracy needs positive and negative scores");
  }
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  for (double s : pairs.positive_scores) items.push_back({s, true});
  for (double s : pairs.negative_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  const std::size_t total = items.size();
  // Threshold below everything: all accepted.
  std::size_t correct = pairs.positive_scores.size();
  VerificationResult best{static_cast<double>(correct) / static_cast<double>(total), items.front().score - 1.0};
  std::size_t k = 0;
  while (k < total) {
    // Move every item with this score below the threshold.
    const double s = items[k].score;
    while (k < total && items[k].score == s) {
      correct = items[k].positive ? correct - 1 : correct + 1;
      ++k;
    }
    const double tau = k < total ? 0.5 * (s + items[k].score) : s + 1.0;
    const double acc = static_cast<double>(correct) / static_cast<double>(total);
    if (acc > best.accuracy) best = {acc, tau};
  }
  return best;
}

/// Fraction of probes whose most similar gallery entry (first index on ties)
/// has the probe's label.
inline double rank1(std::span<const UnitVector> probes, std::span<const std::size_t> probe_labels,
                    std::span<const UnitVector> gallery, std::span<const std::size_t> gallery_labels) {
  if (gallery.empty()) throw Error(ErrorCode::EmptyGallery, "rank1 needs a nonempty gallery");
  if (probes.size() != probe_labels.size() || gallery.size() != gallery_labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one label per probe and per gallery entry required");
  }
  if (probes.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    std::size_t best = 0;
    double best_sim = cos_sim(probes[p], gallery[0]);
    for (std::size_t g = 1; g < gallery.size(); ++g) {
      const double s = cos_sim(probes[p], gallery[g]);
      if (s > best_sim) {
        best_sim = s;
        best = g;
      }
    }
    if (gallery_labels[best] == probe_labels[p]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probes.size());
}

inline constexpr std::size_t kDefaultOverlapBins = 200;

/// Equal-width histogram over [-1, 1]; scores outside the range land in the
/// edge bins.
inline std::vector<std::size_t> histogram(std::span<const double> scores, std::size_t num_bins) {
  if (num_bins < 1) throw Error(ErrorCode::InvalidArgument, "histogram needs at least one bin");
  std::vector<std::size_t> counts(num_bins, 0);
  const auto bins = static_cast<double>(num_bins);
  for (double s : scores) {
    const double pos = std::floor((s + 1.0) * 0.5 * bins);
    const double clamped = std::clamp(pos, 0.0, bins - 1.0);
    ++counts[static_cast<std::size_t>(clamped)];
  }
  return counts;
}

inline double bin_center(std::size_t bin, std::size_t num_bins) {
  const double width = 2.0 / static_cast<double>(num_bins);
  return -1.0 + (static_cast<double>(bin) + 0.5) * width;
}

/// Histogram intersection: sum over bins of min(positive count, negative count).
inline std::size_t overlap_count(const ScoredPairs& pairs, std::size_t num_bins = kDefaultOverlapBins) {
  const auto hp = histogram(pairs.positive_scores, num_bins);
  const auto hn = histogram(pairs.negative_scores, num_bins);
  std::size_t total = 0;
  for (std::size_t b = 0; b < num_bins; ++b) total += std::min(hp[b], hn[b]);
  return total;
}

struct WdfsGap {
  double gap = 0.0;          // min positive - max negative
  double theta_p_max = 0.0;  // radians, arccos(min positive)
  double theta_n_min = 0.0;  // radians, arccos(max negative)
};

inline WdfsGap wdfs_gap(const ScoredPairs& pairs) {
  if (pairs.positive_scores.empty() || pairs.negative_scores.empty()) {
    throw Error(ErrorCode::EmptyInput, "wdfs_gap needs positive and negative scores");
  }
  const double min_pos = *std::min_element(pairs.positive_scores.begin(), pairs.positive_scores.end());
  const double max_neg = *std::max_element(pairs.negative_scores.begin(), pairs.negative_scores.end());
  return {min_pos - max_neg, std::acos(std::clamp(min_pos, -1.0, 1.0)), std::acos(std::clamp(max_neg, -1.0, 1.0))};
}

/// `count` positives drawn uniformly without replacement, and the `count`
/// highest-similarity negatives.
inline ScoredPairs hard_negative_sample(const ScoredPairs& pool, std::size_t count, std::uint64_t seed) {
  if (count > pool.positive_scores.size() || count > pool.negative_scores.size()) {
    throw Error(ErrorCode::InsufficientPairs, "asked for " + std::to_string(count) + " pairs but only " +
                                                  std::to_string(pool.positive_scores.size()) + " positives and " +
                                                  std::to_string(pool.negative_scores.size()) + " negatives exist");
  }
  ScoredPairs out;
  std::mt19937_64 rng(seed);
  std::vector<double> pos = pool.positive_scores;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pos.size() - 1);
    std::swap(pos[i], pos[pick(rng)]);
  }
  pos.resize(count);
  out.positive_scores = std::move(pos);

  std::vector<double> neg = pool.negative_scores;
  std::partial_sort(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(count), neg.end(), std::greater<>());
  neg.resize(count);
  out.negative_scores = std::move(neg);
  return out;
}

/// Cosine scores of every same-class (positive) and cross-class (negative)
/// pair among the given embeddings.
inline ScoredPairs all_pair_scores(std::span<const UnitVector> embeddings, std::span<const std::size_t> labels) {
  ScoredPairs out;
  const MlPairs pairs = mlpg(labels);
  out.positive_scores.reserve(pairs.positives.size());
  out.negative_scores.reserve(pairs.negatives.size());
  for (const auto& p : pairs.positives) out.positive_scores.push_back(cos_sim(embeddings[p.left], embeddings[p.right]));
  for (const auto& p : pairs.negatives) out.negative_scores.push_back(cos_sim(embeddings[p.left], embeddings[p.right]));
  return out;
}

struct MetricsReport {
  std::vector<TarAtFar> tar_at_far;
  double verification_accuracy = 0.0;
  double verification_threshold = 0.0;
  double rank1 = 0.0;
  std::size_t overlap_count = 0;
  std::size_t overlap_bins = kDefaultOverlapBins;
  double wdfs_gap = 0.0;
  double theta_p_max = 0.0;
  double theta_n_min = 0.0;
  std::size_t sampled_pairs = 0;
};

struct EvalOptions {
  std::vector<double> far_targets{1e-4, 1e-3, 1e-2, 1e-1};
  std::size_t overlap_bins = kDefaultOverlapBins;
  std::size_t sample_count = 256;  // positives and hardest negatives per side
  std::uint64_t seed = 0;
};

/// Overlap/WDFS protocol: sample positives at random, take the hardest
/// negatives, then histogram-intersect. The sample size shrinks to what the
/// data offers.
inline ScoredPairs overlap_sample(const ScoredPairs& all, std::size_t count, std::uint64_t seed) {
  const std::size_t k = std::min({count, all.positive_scores.size(), all.negative_scores.size()});
  return hard_negative_sample(all, k, seed);
}

/// Every metric for one set of embeddings. Within each class, even-indexed
/// samples form the gallery and odd-indexed ones the probes.
inline MetricsReport evaluate(std::span<const UnitVector> embeddings, std::span<const std::size_t> labels,
                              const EvalOptions& opt) {
  if (embeddings.size() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "one label per embedding required");
  MetricsReport rep;
  const ScoredPairs all = all_pair_scores(embeddings, labels);
  rep.tar_at_far = tar_at_far(all, opt.far_targets);
  const auto va = verification_accuracy(all);
  rep.verification_accuracy = va.accuracy;
  rep.verification_threshold = va.threshold;

  std::vector<UnitVector> probes, gallery;
  std::vector<std::size_t> probe_labels, gallery_labels;
  std::vector<std::size_t> seen;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const std::size_t y = labels[i];
    if (y >= seen.size()) seen.resize(y + 1, 0);
    if (seen[y]++ % 2 == 0) {
      gallery.push_back(embeddings[i]);
      gallery_labels.push_back(y);
    } else {
      probes.push_back(embeddings[i]);
      probe_labels.push_back(y);
    }
  }
  rep.rank1 = rank1(probes, probe_labels, gallery, gallery_labels);

  const ScoredPairs sampled = overlap_sample(all, opt.sample_count, opt.seed);
  rep.sampled_pairs = sampled.positive_scores.size();
  rep.overlap_bins = opt.overlap_bins;
  rep.overlap_count = overlap_count(sampled, opt.overlap_bins);
  const WdfsGap g = wdfs_gap(sampled);
  rep.wdfs_gap = g.gap;
  rep.theta_p_max = g.theta_p_max;
  rep.theta_n_min = g.theta_n_min;
  return rep;
}

}  // namespace unpg
