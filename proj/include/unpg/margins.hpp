#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "unpg/error.hpp"
#include "unpg/pairgen.hpp"
#include "unpg/sphere.hpp"

namespace unpg {

enum class MarginVariant { snpair, cosface, arcface };

inline const char* to_string(MarginVariant v) {
  switch (v) {
    case MarginVariant::snpair: return "snpair";
    case MarginVariant::cosface: return "cosface";
    case MarginVariant::arcface: return "arcface";
  }
  return "unknown";
}

inline MarginVariant parse_margin_variant(const std::string& name) {
  if (name == "snpair") return MarginVariant::snpair;
  if (name == "cosface") return MarginVariant::cosface;
  if (name == "arcface") return MarginVariant::arcface;
  throw Error(ErrorCode::ConfigInvalid, "unknown margin variant '" + name + "'");
}

inline constexpr double kDefaultMargin = 0.5;

/// m is in radians for arcface and cosine units for cosface; snpair ignores it.
struct MarginConfig {
  MarginVariant variant = MarginVariant::arcface;
  double m = kDefaultMargin;
};

inline void validate(const MarginConfig& cfg) {
  if (!(cfg.m >= 0.0)) throw Error(ErrorCode::ConfigInvalid, "loss.margin.m must be nonnegative");
  if (cfg.variant == MarginVariant::arcface && !(cfg.m < std::numbers::pi)) {
    throw Error(ErrorCode::ConfigInvalid, "loss.margin.m must be below pi for arcface");
  }
}

struct TaggedScore {
  double score = 0.0;
  PairOrigin origin = PairOrigin::ml;
};

struct ScoreSets {
  std::vector<double> positive_scores;
  std::vector<TaggedScore> negative_scores;
};

/// Plain cosine scores for ml pairs, no margin.
inline ScoreSets sc_snpair(const PairIndexSet& pairs, const LabeledBatch& batch) {
  ScoreSets out;
  for (const auto& p : pairs) {
    if (p.origin != PairOrigin::ml) throw Error(ErrorCode::OriginMismatch, "sc_snpair scores ml pairs only");
    const double s = cos_sim(batch.embeddings.at(p.left), batch.embeddings.at(p.right));
    if (p.kind == PairKind::positive) {
      out.positive_scores.push_back(s);
    } else {
      out.negative_scores.push_back({s, PairOrigin::ml});
    }
  }
  return out;
}

/// Additive cosine margin, subtracted so positives move toward the negatives.
inline double sc_cosface(double positive_cos, double m) { return positive_cos - m; }

/// Additive angular margin; theta + m is clamped at pi.
inline double sc_arcface(Angle positive_angle, double m) {
  return std::cos(std::min(positive_angle.radians + m, std::numbers::pi));
}

inline constexpr double kSinFloor = 1e-7;

/// d cos(theta + m) / d cos(theta) = sin(theta + m) / sin(theta), with the
/// denominator floored at kSinFloor. Zero on the clamped branch theta + m >= pi,
/// where the score is constant.
inline double arcface_chain_factor(Angle theta, double m) {
  if (theta.radians + m >= std::numbers::pi) return 0.0;
  return std::sin(theta.radians + m) / std::max(std::sin(theta.radians), kSinFloor);
}

/// Margin-adjusted score of a positive pair given its raw cosine.
inline double positive_score(double cos_theta, const MarginConfig& cfg) {
  switch (cfg.variant) {
    case MarginVariant::snpair: return cos_theta;
    case MarginVariant::cosface: return sc_cosface(cos_theta, cfg.m);
    case MarginVariant::arcface: return sc_arcface(Angle{std::acos(std::clamp(cos_theta, -1.0, 1.0))}, cfg.m);
  }
  return cos_theta;
}

/// d positive_score / d cos_theta.
inline double positive_score_slope(double cos_theta, const MarginConfig& cfg) {
  if (cfg.variant != MarginVariant::arcface) return 1.0;
  return arcface_chain_factor(Angle{std::acos(std::clamp(cos_theta, -1.0, 1.0))}, cfg.m);
}

}  // namespace unpg
