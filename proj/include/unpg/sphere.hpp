#pragma once

// Geometry on the unit hypersphere S^{d-1}: normalization, cosine similarity,
// angles and the closed-form gradient of the cosine with respect to the
// unnormalized inputs. All arithmetic is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "unpg/error.hpp"

namespace unpg {

/// Norms below this are rejected by normalize() and cos_sim_grad().
inline constexpr double kZeroNormThreshold = 1e-12;

using RawVector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "dot of " + std::to_string(a.size()) + "-d and " + std::to_string(b.size()) + "-d vectors");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

/// A point on the unit sphere. Only normalize() and from_unit() build one.
class UnitVector {
 public:
  UnitVector() = default;

  /// Wraps values already known to be unit norm (within 1e-9). Used when
  /// reading vectors that were normalized elsewhere, e.g. checkpoints.
  static UnitVector from_unit(std::vector<double> values) {
    const double n = l2_norm(values);
    if (std::abs(n - 1.0) > 1e-9) {
      throw Error(ErrorCode::InvalidArgument, "vector is not unit norm (|v| = " + std::to_string(n) + ")");
    }
    UnitVector u;
    u.values_ = std::move(values);
    return u;
  }

  std::span<const double> values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }

 private:
  friend UnitVector normalize(std::span<const double> v);
  std::vector<double> values_;
};

/// Angle in radians, always in [0, pi].
struct Angle {
  double radians = 0.0;
};

inline UnitVector normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n >= kZeroNormThreshold)) {
    throw Error(ErrorCode::ZeroNorm, "cannot normalize vector with norm " + std::to_string(n));
  }
  UnitVector u;
  u.values_.resize(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) u.values_[k] = v[k] / n;
  return u;
}

/// Dot product of two unit vectors, clamped to [-1, 1].
inline double cos_sim(const UnitVector& a, const UnitVector& b) {
  return std::clamp(dot(a.values(), b.values()), -1.0, 1.0);
}

inline Angle angle(const UnitVector& a, const UnitVector& b) { return Angle{std::acos(cos_sim(a, b))}; }

/// Gradients of cos(a, b) = <a/|a|, b/|b|> with respect to raw a and b:
///   d/da = (b/|b| - cos * a/|a|) / |a|, and symmetrically for b.
inline std::pair<RawVector, RawVector> cos_sim_grad(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "cos_sim_grad on vectors of different dimension");
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na >= kZeroNormThreshold) || !(nb >= kZeroNormThreshold)) {
    throw Error(ErrorCode::ZeroNorm, "cos_sim_grad on a vector with norm below threshold");
  }
  const double c = dot(a, b) / (na * nb);
  RawVector ga(a.size());
  RawVector gb(b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double ua = a[k] / na;
    const double ub = b[k] / nb;
    ga[k] = (ub - c * ua) / na;
    gb[k] = (ua - c * ub) / nb;
  }
  return {std::move(ga), std::move(gb)};
}

/// Dense row-major matrix of doubles. Rows hold embeddings, class weights or
/// encoder rows.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Normalizes each row of `m` into a UnitVector.
inline std::vector<UnitVector> normalize_rows(const Matrix& m) {
  std::vector<UnitVector> out;
  out.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(normalize(m.row(r)));
  return out;
}

}  // namespace unpg
