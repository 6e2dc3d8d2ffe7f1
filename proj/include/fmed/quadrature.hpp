#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"

namespace fmed {

// Influence window Omega_t = [(t - delta) v 0, t]. delta = +inf is the whole
// history [0, t].
struct Window {
  double delta = 0.0;

  static Window infinite() { return {std::numeric_limits<double>::infinity()}; }
  bool is_infinite() const { return std::isinf(delta); }
  bool operator==(const Window&) const = default;
};

// A window resolved against a grid: delta rounded to a whole number of steps.
struct SnappedWindow {
  static constexpr std::size_t unbounded = std::numeric_limits<std::size_t>::max();

  std::size_t steps = 0;  // `unbounded` for the whole history
  double delta = 0.0;     // realized width (steps * dt, or inf)
  bool adjusted = false;  // snapping moved delta by more than 1e-9

  bool is_infinite() const { return steps == unbounded; }
  // First grid index inside the window ending at index k.
  std::size_t start(std::size_t k) const { return steps >= k ? 0 : k - steps; }
};

// Rounds delta to the nearest multiple of dt (ties round up).
inline SnappedWindow snap(const Window& window, const TimeGrid& grid) {
  if (std::isnan(window.delta) || window.delta < 0.0) {
    throw InvalidArgument("window width must be nonnegative, got " + std::to_string(window.delta));
  }
  SnappedWindow out;
  if (window.is_infinite()) {
    out.steps = SnappedWindow::unbounded;
    out.delta = window.delta;
    return out;
  }
  const double ratio = window.delta / grid.dt();
  const double steps = std::floor(ratio + 0.5);
  // Anything at or beyond the grid length behaves like the whole history.
  out.steps = steps >= static_cast<double>(grid.size()) ? grid.size() : static_cast<std::size_t>(steps);
  out.delta = steps * grid.dt();
  out.adjusted = std::abs(out.delta - window.delta) > 1e-9;
  return out;
}

// Trapezoid of f(j) over grid indices [lo, hi]; zero when lo == hi. Every
// integral in the library goes through this summation order.
template <class F>
inline double trapezoid_indices(F&& f, std::size_t lo, std::size_t hi, double dt) {
  if (hi <= lo) return 0.0;
  double s = 0.5 * f(lo);
  for (std::size_t j = lo + 1; j < hi; ++j) s += f(j);
  s += 0.5 * f(hi);
  return s * dt;
}

// Composite trapezoid over [t_0, t_{n-1}].
inline double integrate(const Eigen::Ref<const Eigen::VectorXd>& values, const TimeGrid& grid) {
  if (static_cast<std::size_t>(values.size()) != grid.size()) {
    throw ShapeError("integrate: " + std::to_string(values.size()) + " values for a grid of " +
                     std::to_string(grid.size()) + " points");
  }
  return trapezoid_indices([&](std::size_t j) { return values[static_cast<Eigen::Index>(j)]; }, 0,
                           grid.size() - 1, grid.dt());
}

// Integral over the window ending at index k of f(j, k).
template <class F>
inline double window_integral(F&& f, std::size_t k, const SnappedWindow& window, double dt) {
  return trapezoid_indices([&](std::size_t j) { return f(j, k); }, window.start(k), k, dt);
}

// Entry k is the trapezoid of values over [(t_k - delta) v 0, t_k].
inline Eigen::VectorXd windowed_integrals(const Eigen::Ref<const Eigen::VectorXd>& values, const TimeGrid& grid,
                                          const SnappedWindow& window) {
  if (static_cast<std::size_t>(values.size()) != grid.size()) {
    throw ShapeError("windowed_integrals: " + std::to_string(values.size()) + " values for a grid of " +
                     std::to_string(grid.size()) + " points");
  }
  Eigen::VectorXd out(values.size());
  const auto at = [&](std::size_t j) { return values[static_cast<Eigen::Index>(j)]; };
  for (std::size_t k = 0; k < grid.size(); ++k) {
    out[static_cast<Eigen::Index>(k)] = trapezoid_indices(at, window.start(k), k, grid.dt());
  }
  return out;
}

inline Eigen::VectorXd windowed_integrals(const Eigen::Ref<const Eigen::VectorXd>& values, const TimeGrid& grid,
                                          const Window& window) {
  return windowed_integrals(values, grid, snap(window, grid));
}

}  // namespace fmed
