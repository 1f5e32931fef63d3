#pragma once

// Reference implementations used by the tests: finite differences, a
// quartile/filter oracle, brute-force metrics, and small random generators.
// Nothing here calls into the library routine it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "unpg/sphere.hpp"

namespace oracle {

/// Central difference of f() with respect to every entry of x, perturbed in
/// place. f must read x through a reference.
template <class F>
std::vector<double> fd_gradient(std::vector<double>& x, F&& f, double h) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f();
    x[k] = keep - h;
    const double down = f();
    x[k] = keep;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) diff += (a[k] - b[k]) * (a[k] - b[k]);
  const double scale = std::max(norm2(a), norm2(b));
  if (scale == 0.0) return 0.0;
  return std::sqrt(diff) / scale;
}

inline std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// p-quantile by order statistics: value at rank p(n-1), interpolated between
/// neighbouring order statistics found with nth_element.
inline double quantile(std::vector<double> v, double p) {
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double a = v[lo];
  if (lo + 1 >= v.size()) return a;
  const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  return a + (pos - static_cast<double>(lo)) * (b - a);
}

inline std::vector<bool> box_whisker_mask(const std::vector<double>& s, double r) {
  const double ql = quantile(s, 0.25);
  const double qu = quantile(s, 0.75);
  const double iqr = qu - ql;
  std::vector<bool> keep;
  for (double x : s) keep.push_back(x >= ql - r * iqr && x <= qu + r * iqr);
  return keep;
}

/// Smallest candidate threshold with FAR <= f, scanning every score and -inf.
struct TarOracle {
  double tar;
  double threshold;
};

inline TarOracle tar_at_far(const std::vector<double>& pos, const std::vector<double>& neg, double f) {
  std::vector<double> cands{-std::numeric_limits<double>::infinity()};
  cands.insert(cands.end(), pos.begin(), pos.end());
  cands.insert(cands.end(), neg.begin(), neg.end());
  double best = std::numeric_limits<double>::infinity();
  for (double t : cands) {
    std::size_t fa = 0;
    for (double x : neg) fa += x > t ? 1 : 0;
    if (static_cast<double>(fa) / static_cast<double>(neg.size()) <= f) best = std::min(best, t);
  }
  std::size_t ta = 0;
  for (double x : pos) ta += x > best ? 1 : 0;
  return {static_cast<double>(ta) / static_cast<double>(pos.size()), best};
}

struct AccuracyOracle {
  double accuracy;
  double threshold;
};

/// Exhaustive sweep over min-1, midpoints of consecutive distinct scores and
/// max+1; accept iff score >= threshold; first (smallest) best wins.
inline AccuracyOracle verification_accuracy(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::set<double> distinct(pos.begin(), pos.end());
  distinct.insert(neg.begin(), neg.end());
  const std::vector<double> u(distinct.begin(), distinct.end());
  std::vector<double> cands{u.front() - 1.0};
  for (std::size_t k = 0; k + 1 < u.size(); ++k) cands.push_back(0.5 * (u[k] + u[k + 1]));
  cands.push_back(u.back() + 1.0);
  AccuracyOracle best{-1.0, 0.0};
  for (double t : cands) {
    std::size_t ok = 0;
    for (double x : pos) ok += x >= t ? 1 : 0;
    for (double x : neg) ok += x < t ? 1 : 0;
    const double acc = static_cast<double>(ok) / static_cast<double>(pos.size() + neg.size());
    if (acc > best.accuracy) best = {acc, t};
  }
  return best;
}

inline double raw_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double rank1(const std::vector<unpg::UnitVector>& probes, const std::vector<std::size_t>& probe_labels,
                    const std::vector<unpg::UnitVector>& gallery, const std::vector<std::size_t>& gallery_labels) {
  std::size_t hits = 0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    std::size_t arg = gallery.size();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const double s = std::clamp(raw_dot(probes[p].values(), gallery[g].values()), -1.0, 1.0);
      if (arg == gallery.size() || s > best) {
        best = s;
        arg = g;
      }
    }
    hits += gallery_labels[arg] == probe_labels[p] ? 1 : 0;
  }
  return probes.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(probes.size());
}

// ---------------------------------------------------------------------------
// generators

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool coin() { return index(2) == 1; }

  std::vector<double> gaussian(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
  }

  unpg::Matrix gaussian_matrix(std::size_t rows, std::size_t cols) {
    unpg::Matrix m(rows, cols);
    for (auto& x : m.data()) x = normal();
    return m;
  }

  std::vector<double> scores(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

  /// Scores that include repeated values and occasional outliers.
  std::vector<double> similarity_list(std::size_t n) {
    std::vector<double> v;
    const int style = static_cast<int>(index(4));
    for (std::size_t k = 0; k < n; ++k) {
      double x = uniform(-0.3, 0.3);
      if (style == 1) x = std::round(x * 10.0) / 10.0;
      if (style == 2 && index(20) == 0) x = coin() ? uniform(0.8, 1.0) : uniform(-1.0, -0.8);
      if (style == 3) x = 0.25;
      v.push_back(x);
    }
    return v;
  }

  /// Labels in [0, c) where every class is used when n >= c.
  std::vector<std::size_t> labels(std::size_t n, std::size_t c) {
    std::vector<std::size_t> y(n);
    for (std::size_t k = 0; k < n; ++k) y[k] = k < c ? k : index(c);
    std::shuffle(y.begin(), y.end(), rng_);
    return y;
  }

  std::vector<unpg::UnitVector> units(std::size_t n, std::size_t d) {
    std::vector<unpg::UnitVector> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(unpg::normalize(gaussian(d)));
    return out;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace oracle
