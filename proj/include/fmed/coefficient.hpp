#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <variant>

#include "fmed/basis.hpp"
#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"
#include "fmed/quadrature.hpp"

namespace fmed {

enum class ModelType { concurrent, historical };

inline std::string to_string(ModelType type) {
  return type == ModelType::concurrent ? "concurrent" : "historical";
}

// theta(t) = phi(t)^T g
struct CurveEstimate {
  BasisSystem basis;
  Eigen::VectorXd coeffs;
};

// theta(s, t) = phi(s)^T G eta(t), supported on the band (t - delta) v 0 <= s <= t.
struct SurfaceEstimate {
  BasisSystem basis_s;
  BasisSystem basis_t;
  Eigen::MatrixXd coeffs;  // K_s x K_t
  Window window;           // realized (snapped) width
};

using CoefficientEstimate = std::variant<CurveEstimate, SurfaceEstimate>;

inline ModelType model_type(const CoefficientEstimate& est) {
  return std::holds_alternative<CurveEstimate>(est) ? ModelType::concurrent : ModelType::historical;
}

struct CoefficientValue {
  double value = 0.0;
  bool extrapolated = false;
};

inline CoefficientValue eval_coefficient(const CoefficientEstimate& est, double t) {
  const auto* curve = std::get_if<CurveEstimate>(&est);
  if (curve == nullptr) throw InvalidArgument("surface coefficient needs an (s, t) point");
  return {curve->basis.eval(t).dot(curve->coeffs), false};
}

inline CoefficientValue eval_coefficient(const CoefficientEstimate& est, double s, double t) {
  const auto* surface = std::get_if<SurfaceEstimate>(&est);
  if (surface == nullptr) throw InvalidArgument("curve coefficient takes a single time point");
  const double value = surface->basis_s.eval(s).dot(surface->coeffs * surface->basis_t.eval(t));
  const double tol = 1e-9 * surface->basis_t.domain_end();
  const double lower = surface->window.is_infinite() ? 0.0 : std::max(0.0, t - surface->window.delta);
  const bool inside = s <= t + tol && s >= lower - tol;
  return {value, !inside};
}

// A coefficient function sampled on the observation grid, ready for the
// window integrals that define predictions and causal effects.
struct CoefficientGrid {
  ModelType type = ModelType::concurrent;
  Eigen::VectorXd curve;    // theta(t_k)
  Eigen::MatrixXd surface;  // (j, k) -> theta(s_j, t_k)
  SnappedWindow window;

  static CoefficientGrid from_curve(Eigen::VectorXd values) {
    CoefficientGrid g;
    g.curve = std::move(values);
    return g;
  }

  static CoefficientGrid from_surface(Eigen::MatrixXd values, SnappedWindow window) {
    CoefficientGrid g;
    g.type = ModelType::historical;
    g.surface = std::move(values);
    g.window = window;
    return g;
  }

  static CoefficientGrid from_function(const std::function<double(double)>& f, const TimeGrid& grid) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t k = 0; k < grid.size(); ++k) v[static_cast<Eigen::Index>(k)] = f(grid.time(k));
    return from_curve(std::move(v));
  }

  // Only the band entries are evaluated; the rest stay zero.
  static CoefficientGrid from_function(const std::function<double(double, double)>& f, const TimeGrid& grid,
                                       SnappedWindow window) {
    const auto n = static_cast<Eigen::Index>(grid.size());
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      for (std::size_t j = window.start(k); j <= k; ++j) {
        v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = f(grid.time(j), grid.time(k));
      }
    }
    return from_surface(std::move(v), window);
  }
};

inline CoefficientGrid sample_on_grid(const CoefficientEstimate& est, const TimeGrid& grid) {
  const Eigen::VectorXd times = grid.times();
  if (const auto* curve = std::get_if<CurveEstimate>(&est)) {
    return CoefficientGrid::from_curve(curve->basis.eval_matrix(times) * curve->coeffs);
  }
  const auto& surface = std::get<SurfaceEstimate>(est);
  Eigen::MatrixXd values =
      surface.basis_s.eval_matrix(times) * surface.coeffs * surface.basis_t.eval_matrix(times).transpose();
  return CoefficientGrid::from_surface(std::move(values), snap(surface.window, grid));
}

// The structural map of one path applied to an input curve x:
//   concurrent: x(t) theta(t)
//   historical: integral over Omega_t of x(s) theta(s, t) ds
// Direct effects are apply_path(gamma, z - z'); indirect effects are
// apply_path(beta, apply_path(alpha, z - z')), which covers all four
// concurrent/historical combinations of the alpha and beta paths.
inline Eigen::VectorXd apply_path(const CoefficientGrid& coef, const Eigen::Ref<const Eigen::VectorXd>& x,
                                  const TimeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (x.size() != n) throw ShapeError("input curve does not match the grid");
  if (coef.type == ModelType::concurrent) {
    if (coef.curve.size() != n) throw ShapeError("coefficient curve does not match the grid");
    return x.cwiseProduct(coef.curve);
  }
  if (coef.surface.rows() != n || coef.surface.cols() != n) {
    throw ShapeError("coefficient surface does not match the grid");
  }
  Eigen::VectorXd out(n);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    out[static_cast<Eigen::Index>(k)] = window_integral(
        [&](std::size_t j, std::size_t kk) {
          return x[static_cast<Eigen::Index>(j)] *
                 coef.surface(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(kk));
        },
        k, coef.window, grid.dt());
  }
  return out;
}

}  // namespace fmed
