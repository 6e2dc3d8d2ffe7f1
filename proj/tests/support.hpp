#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "fmed/funcdata.hpp"

namespace fmed::testing {

// Smooth random curves: a few random sinusoids plus an offset.
inline FunctionalSample smooth_sample(const TimeGrid& grid, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const double T = grid.domain_length();
  CurveMatrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(grid.size()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double c = g(rng);
    const double a1 = g(rng);
    const double a2 = g(rng);
    const double p1 = g(rng);
    const double p2 = g(rng);
    for (Eigen::Index k = 0; k < v.cols(); ++k) {
      const double t = grid.time(static_cast<std::size_t>(k));
      v(i, k) = c + a1 * std::sin(2 * M_PI * t / T + p1) + a2 * std::sin(6 * M_PI * t / T + p2);
    }
  }
  return FunctionalSample(grid, v);
}

inline FunctionalSample noise_sample(const TimeGrid& grid, std::size_t n, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  CurveMatrix v(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(grid.size()));
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index k = 0; k < v.cols(); ++k) v(i, k) = g(rng);
  }
  return FunctionalSample(grid, v);
}

inline FunctionalSample plus(const FunctionalSample& a, const FunctionalSample& b) {
  return FunctionalSample(a.grid(), a.values() + b.values());
}

// Trapezoid weights of grid points j over [lo, hi]; all zero when lo == hi.
inline double trap_weight(std::size_t j, std::size_t lo, std::size_t hi, double dt) {
  if (hi <= lo || j < lo || j > hi) return 0.0;
  return (j == lo || j == hi) ? 0.5 * dt : dt;
}

inline double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace fmed::testing
