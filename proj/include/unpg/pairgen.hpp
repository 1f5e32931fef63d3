#pragma once

// Pair generation.
//
//   mlpg        sample/sample pairs inside a mini-batch (metric view)
//   clpg        sample/class-weight pairs for one anchor (classification view)
//   filter_noise  box-and-whisker retention band over ml negative similarities
//   unpg_union  per-anchor negatives = cl negatives + filtered ml negatives

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "unpg/error.hpp"
#include "unpg/sphere.hpp"

namespace unpg {

enum class PairKind { positive, negative };
enum class PairOrigin { ml, cl };

/// For ml pairs both indices address batch samples and left < right.
/// For cl pairs left is a batch sample and right a class-weight row.
struct IndexPair {
  std::size_t left = 0;
  std::size_t right = 0;
  PairKind kind = PairKind::negative;
  PairOrigin origin = PairOrigin::ml;

  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

struct PairIndexSet {
  std::vector<IndexPair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  auto begin() const noexcept { return pairs.begin(); }
  auto end() const noexcept { return pairs.end(); }
};

struct LabeledBatch {
  std::vector<UnitVector> embeddings;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct ClassWeightMatrix {
  std::vector<UnitVector> weights;

  std::size_t num_classes() const noexcept { return weights.size(); }
};

inline void validate(const LabeledBatch& batch, std::size_t num_classes) {
  if (batch.embeddings.size() != batch.labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "batch has " + std::to_string(batch.embeddings.size()) +
                                                  " embeddings but " + std::to_string(batch.labels.size()) + " labels");
  }
  if (batch.size() < 2) throw Error(ErrorCode::InvalidArgument, "batch needs at least two samples");
  for (std::size_t label : batch.labels) {
    if (label >= num_classes) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

struct MlPairs {
  PairIndexSet positives;
  PairIndexSet negatives;
};

/// All unordered sample pairs of the batch, split by label agreement.
inline MlPairs mlpg(std::span<const std::size_t> labels) {
  MlPairs out;
  const std::size_t n = labels.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (labels[i] == labels[j]) {
        out.positives.pairs.push_back({i, j, PairKind::positive, PairOrigin::ml});
      } else {
        out.negatives.pairs.push_back({i, j, PairKind::negative, PairOrigin::ml});
      }
    }
  }
  return out;
}

inline MlPairs mlpg(const LabeledBatch& batch) { return mlpg(batch.labels); }

struct ClPairs {
  PairIndexSet positive;
  PairIndexSet negatives;
};

/// The anchor's own class weight is its single positive, every other class a
/// negative.
inline ClPairs clpg(std::size_t anchor, std::span<const std::size_t> labels, std::size_t num_classes) {
  if (anchor >= labels.size()) {
    throw Error(ErrorCode::InvalidArgument, "anchor " + std::to_string(anchor) + " outside batch");
  }
  const std::size_t y = labels[anchor];
  if (y >= num_classes) {
    throw Error(ErrorCode::LabelOutOfRange,
                "anchor label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  ClPairs out;
  out.positive.pairs.push_back({anchor, y, PairKind::positive, PairOrigin::cl});
  out.negatives.pairs.reserve(num_classes - 1);
  for (std::size_t j = 0; j < num_classes; ++j) {
    if (j != y) out.negatives.pairs.push_back({anchor, j, PairKind::negative, PairOrigin::cl});
  }
  return out;
}

inline ClPairs clpg(std::size_t anchor, const LabeledBatch& batch, std::size_t num_classes) {
  return clpg(anchor, batch.labels, num_classes);
}

/// How the lower/upper quartiles are read off the sorted similarity list.
enum class QuartileMethod {
  linear,        // interpolate at 0.25(n-1) and 0.75(n-1)
  tukey_hinges,  // medians of the lower and upper halves (median included for odd n)
};

inline constexpr QuartileMethod kDefaultQuartileMethod = QuartileMethod::linear;

/// Whisker sizes used for the shallow and deep backbones respectively.
inline constexpr double kWhiskerShallow = 1.0;
inline constexpr double kWhiskerDeep = 1.5;

struct FilterConfig {
  double whisker_r = kWhiskerShallow;
  QuartileMethod quartiles = kDefaultQuartileMethod;
};

struct Quartiles {
  double lower = 0.0;
  double upper = 0.0;
};

namespace detail {

inline double interpolate_sorted(std::span<const double> sorted, double pos) {
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double median_sorted(std::span<const double> sorted) {
  return interpolate_sorted(sorted, 0.5 * static_cast<double>(sorted.size() - 1));
}

}  // namespace detail

inline Quartiles quartiles(std::span<const double> values, QuartileMethod method = kDefaultQuartileMethod) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "quartiles of an empty list");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (method == QuartileMethod::linear) {
    const double last = static_cast<double>(n - 1);
    return {detail::interpolate_sorted(sorted, 0.25 * last), detail::interpolate_sorted(sorted, 0.75 * last)};
  }
  const std::size_t half = (n + 1) / 2;
  std::span<const double> s(sorted);
  return {detail::median_sorted(s.first(half)), detail::median_sorted(s.last(half))};
}

/// Box-and-whisker retention mask: keeps s with
///   s_l - r*IQR <= s <= s_u + r*IQR.
inline std::vector<bool> filter_noise(std::span<const double> similarities, const FilterConfig& cfg) {
  if (similarities.empty()) throw Error(ErrorCode::EmptyInput, "filter_noise on an empty similarity list");
  if (!(cfg.whisker_r >= 0.0)) throw Error(ErrorCode::InvalidArgument, "whisker size must be nonnegative");
  for (double s : similarities) {
    if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "filter_noise on a nonfinite similarity");
  }
  const Quartiles q = quartiles(similarities, cfg.quartiles);
  const double iqr = q.upper - q.lower;
  const double lo = q.lower - cfg.whisker_r * iqr;
  const double hi = q.upper + cfg.whisker_r * iqr;
  std::vector<bool> retained(similarities.size());
  for (std::size_t k = 0; k < similarities.size(); ++k) {
    retained[k] = lo <= similarities[k] && similarities[k] <= hi;
  }
  return retained;
}

/// Keeps the pairs of `negatives` whose mask entry is set.
inline PairIndexSet select(const PairIndexSet& negatives, const std::vector<bool>& mask) {
  if (mask.size() != negatives.size()) {
    throw Error(ErrorCode::DimensionMismatch, "mask length differs from pair count");
  }
  PairIndexSet out;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k]) out.pairs.push_back(negatives.pairs[k]);
  }
  return out;
}

/// Per-anchor negatives: cl negatives followed by the (shared) ml negatives.
inline PairIndexSet unpg_union(const PairIndexSet& cl_negatives, const PairIndexSet& filtered_ml_negatives) {
  PairIndexSet out;
  out.pairs.reserve(cl_negatives.size() + filtered_ml_negatives.size());
  for (const auto& p : cl_negatives) {
    if (p.origin != PairOrigin::cl) throw Error(ErrorCode::OriginMismatch, "ml pair in the cl negative set");
    out.pairs.push_back(p);
  }
  for (const auto& p : filtered_ml_negatives) {
    if (p.origin != PairOrigin::ml) throw Error(ErrorCode::OriginMismatch, "cl pair in the ml negative set");
    out.pairs.push_back(p);
  }
  return out;
}

}  // namespace unpg
