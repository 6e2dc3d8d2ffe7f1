#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "fmed/error.hpp"

namespace fmed {

enum class BasisKind { fourier, bspline, monomial };

inline std::string to_string(BasisKind kind) {
  switch (kind) {
    case BasisKind::fourier: return "fourier";
    case BasisKind::bspline: return "bspline";
    case BasisKind::monomial: return "monomial";
  }
  return "unknown";
}

// A finite basis on [0, T].
//
// fourier:  K odd, orthonormal on [0, T] with period T:
//           1/sqrt(T), sqrt(2/T) sin(r w t), sqrt(2/T) cos(r w t), w = 2 pi / T.
// bspline:  K = interior knots + order, uniform interior knots, boundary
//           knots repeated `order` times.
// monomial: 1, t, t^2, ..., t^(K-1).
class BasisSystem {
 public:
  static BasisSystem fourier(int n_basis, double domain_end) {
    if (n_basis < 1 || n_basis % 2 == 0) {
      throw InvalidArgument("fourier basis needs an odd, positive number of functions");
    }
    return BasisSystem(BasisKind::fourier, n_basis, domain_end, 0);
  }

  static BasisSystem bspline(int n_basis, double domain_end, int order = 4) {
    if (order < 1) throw InvalidArgument("bspline order must be positive");
    if (n_basis < order) {
      throw InvalidArgument("bspline basis needs at least `order` functions (" + std::to_string(order) + ")");
    }
    BasisSystem b(BasisKind::bspline, n_basis, domain_end, order);
    const int interior = n_basis - order;
    b.knots_.assign(static_cast<std::size_t>(order), 0.0);
    for (int i = 1; i <= interior; ++i) {
      b.knots_.push_back(domain_end * static_cast<double>(i) / static_cast<double>(interior + 1));
    }
    b.knots_.insert(b.knots_.end(), static_cast<std::size_t>(order), domain_end);
    return b;
  }

  static BasisSystem monomial(int n_basis, double domain_end) {
    if (n_basis < 1) throw InvalidArgument("monomial basis needs at least one function");
    return BasisSystem(BasisKind::monomial, n_basis, domain_end, 0);
  }

  BasisKind kind() const { return kind_; }
  int size() const { return n_basis_; }
  double domain_end() const { return domain_end_; }
  int order() const { return order_; }
  int interior_knots() const { return kind_ == BasisKind::bspline ? n_basis_ - order_ : 0; }
  const std::vector<double>& knots() const { return knots_; }

  // Highest derivative that exists (piecewise) for every function.
  int smoothness() const { return kind_ == BasisKind::bspline ? order_ - 1 : 1 << 20; }

  bool operator==(const BasisSystem& o) const {
    return kind_ == o.kind_ && n_basis_ == o.n_basis_ && domain_end_ == o.domain_end_ && order_ == o.order_;
  }

  // r-th derivative of every basis function at t (r = 0 gives values).
  Eigen::VectorXd derivative(double t, int r) const {
    t = check_domain(t);
    switch (kind_) {
      case BasisKind::fourier: return fourier_derivative(t, r);
      case BasisKind::bspline: return bspline_derivative(t, r);
      case BasisKind::monomial: return monomial_derivative(t, r);
    }
    return {};
  }

  Eigen::VectorXd eval(double t) const { return derivative(t, 0); }

  // Rows are evaluation points.
  Eigen::MatrixXd derivative_matrix(const Eigen::VectorXd& times, int r) const {
    Eigen::MatrixXd out(times.size(), n_basis_);
    for (Eigen::Index m = 0; m < times.size(); ++m) out.row(m) = derivative(times[m], r).transpose();
    return out;
  }

  Eigen::MatrixXd eval_matrix(const Eigen::VectorXd& times) const { return derivative_matrix(times, 0); }

 private:
  BasisSystem(BasisKind kind, int n_basis, double domain_end, int order)
      : kind_(kind), n_basis_(n_basis), domain_end_(domain_end), order_(order) {
    if (!(domain_end > 0.0) || !std::isfinite(domain_end)) {
      throw InvalidArgument("basis domain end must be positive and finite");
    }
  }

  double check_domain(double t) const {
    const double tol = 1e-12 * domain_end_;
    if (!(t >= -tol && t <= domain_end_ + tol)) {
      throw DomainError("t = " + std::to_string(t) + " outside basis domain [0, " +
                        std::to_string(domain_end_) + "]");
    }
    return std::clamp(t, 0.0, domain_end_);
  }

  Eigen::VectorXd fourier_derivative(double t, int r) const {
    Eigen::VectorXd out(n_basis_);
    const double T = domain_end_;
    const double omega = 2.0 * std::numbers::pi / T;
    const double c = std::sqrt(2.0 / T);
    out[0] = r == 0 ? 1.0 / std::sqrt(T) : 0.0;
    // d^r/dt^r sin(a t) = a^r sin(a t + r pi / 2), likewise for cos.
    const double shift = static_cast<double>(r) * std::numbers::pi / 2.0;
    for (int h = 1; 2 * h - 1 < n_basis_; ++h) {
      const double a = static_cast<double>(h) * omega;
      const double scale = c * std::pow(a, r);
      out[2 * h - 1] = scale * std::sin(a * t + shift);
      out[2 * h] = scale * std::cos(a * t + shift);
    }
    return out;
  }

  Eigen::VectorXd monomial_derivative(double t, int r) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
    for (int k = r; k < n_basis_; ++k) {
      double falling = 1.0;
      for (int j = 0; j < r; ++j) falling *= static_cast<double>(k - j);
      out[k] = falling * std::pow(t, k - r);
    }
    return out;
  }

  // All B-splines of order `j` at x; length knots - j.
  std::vector<double> bspline_values(double x, int j) const {
    const auto& kn = knots_;
    const std::size_t nk = kn.size();
    std::vector<double> b(nk - 1, 0.0);
    // Right end belongs to the last non-degenerate span.
    std::size_t span = nk;
    for (std::size_t i = 0; i + 1 < nk; ++i) {
      if (kn[i] < kn[i + 1] && x >= kn[i] && x < kn[i + 1]) {
        span = i;
        break;
      }
    }
    if (span == nk) {
      for (std::size_t i = nk - 1; i-- > 0;) {
        if (kn[i] < kn[i + 1]) {
          span = i;
          break;
        }
      }
    }
    b[span] = 1.0;
    for (int q = 2; q <= j; ++q) {
      std::vector<double> next(nk - static_cast<std::size_t>(q), 0.0);
      for (std::size_t i = 0; i < next.size(); ++i) {
        double v = 0.0;
        const double d1 = kn[i + q - 1] - kn[i];
        const double d2 = kn[i + q] - kn[i + 1];
        if (d1 > 0.0) v += (x - kn[i]) / d1 * b[i];
        if (d2 > 0.0) v += (kn[i + q] - x) / d2 * b[i + 1];
        next[i] = v;
      }
      b = std::move(next);
    }
    return b;
  }

  Eigen::VectorXd bspline_derivative(double t, int r) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
    if (r >= order_) return out;
    const auto& kn = knots_;
    // Start from order (order - r) values and apply the derivative recursion
    // D B_{i,j} = (j-1) [B_{i,j-1}/(t_{i+j-1}-t_i) - B_{i+1,j-1}/(t_{i+j}-t_{i+1})].
    std::vector<double> g = bspline_values(t, order_ - r);
    for (int j = order_ - r + 1; j <= order_; ++j) {
      std::vector<double> next(g.size() - 1, 0.0);
      for (std::size_t i = 0; i < next.size(); ++i) {
        double v = 0.0;
        const double d1 = kn[i + j - 1] - kn[i];
        const double d2 = kn[i + j] - kn[i + 1];
        if (d1 > 0.0) v += g[i] / d1;
        if (d2 > 0.0) v -= g[i + 1] / d2;
        next[i] = static_cast<double>(j - 1) * v;
      }
      g = std::move(next);
    }
    for (int k = 0; k < n_basis_; ++k) out[k] = g[static_cast<std::size_t>(k)];
    return out;
  }

  BasisKind kind_;
  int n_basis_;
  double domain_end_;
  int order_;
  std::vector<double> knots_;
};

inline Eigen::VectorXd eval_basis(const BasisSystem& basis, double t) { return basis.eval(t); }

enum class OperatorKind { curvature, harmonic };

inline std::string to_string(OperatorKind kind) {
  return kind == OperatorKind::curvature ? "curvature" : "harmonic";
}

// Roughness operator: curvature L = D^2, harmonic acceleration L = w^2 D + D^3.
struct LinDiffOp {
  OperatorKind kind = OperatorKind::curvature;
  // Harmonic only; defaults to 2 pi / T of the basis it is applied to.
  std::optional<double> omega;

  static LinDiffOp curvature() { return {OperatorKind::curvature, std::nullopt}; }
  static LinDiffOp harmonic(std::optional<double> omega = std::nullopt) {
    return {OperatorKind::harmonic, omega};
  }

  double angular_frequency(const BasisSystem& basis) const {
    return omega.value_or(2.0 * std::numbers::pi / basis.domain_end());
  }
  int highest_derivative() const { return kind == OperatorKind::curvature ? 2 : 3; }
};

inline void check_capability(const LinDiffOp& op, const BasisSystem& basis) {
  if (basis.kind() != BasisKind::bspline) return;
  const int needed_order = op.kind == OperatorKind::harmonic ? 5 : 3;
  if (basis.order() < needed_order) {
    throw CapabilityError("bspline of order " + std::to_string(basis.order()) + " cannot carry the " +
                          to_string(op.kind) + " operator (needs order >= " +
                          std::to_string(needed_order) + ")");
  }
}

// (L phi)(t) from analytic derivatives.
inline Eigen::VectorXd eval_operator(const LinDiffOp& op, const BasisSystem& basis, double t) {
  check_capability(op, basis);
  if (op.kind == OperatorKind::curvature) return basis.derivative(t, 2);
  const double w = op.angular_frequency(basis);
  return w * w * basis.derivative(t, 1) + basis.derivative(t, 3);
}

namespace detail {

struct FineGrid {
  Eigen::VectorXd points;
  Eigen::VectorXd weights;
};

// 512 * refine trapezoid intervals over [0, T].
inline FineGrid fine_grid(double domain_end, int refine) {
  if (refine < 4) throw InvalidArgument("quadrature refine factor must be at least 4");
  const Eigen::Index intervals = 512 * static_cast<Eigen::Index>(refine);
  const double h = domain_end / static_cast<double>(intervals);
  FineGrid g{Eigen::VectorXd(intervals + 1), Eigen::VectorXd::Constant(intervals + 1, h)};
  for (Eigen::Index m = 0; m <= intervals; ++m) g.points[m] = domain_end * static_cast<double>(m) / static_cast<double>(intervals);
  g.weights[0] = g.weights[intervals] = 0.5 * h;
  return g;
}

// F^T W F with the upper triangle mirrored from the lower one.
inline Eigen::MatrixXd weighted_cross(const Eigen::MatrixXd& f, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd raw = f.transpose() * w.asDiagonal() * f;
  return raw.selfadjointView<Eigen::Lower>();
}

}  // namespace detail

// Integral over [0, T] of (L phi)(L phi)^T.
inline Eigen::MatrixXd penalty_matrix(const BasisSystem& basis, const LinDiffOp& op, int refine = 4) {
  check_capability(op, basis);
  const auto g = detail::fine_grid(basis.domain_end(), refine);
  Eigen::MatrixXd l(g.points.size(), basis.size());
  for (Eigen::Index m = 0; m < g.points.size(); ++m) l.row(m) = eval_operator(op, basis, g.points[m]).transpose();
  return detail::weighted_cross(l, g.weights);
}

// Integral over [0, T] of phi phi^T.
inline Eigen::MatrixXd gram_matrix(const BasisSystem& basis, int refine = 4) {
  const auto g = detail::fine_grid(basis.domain_end(), refine);
  return detail::weighted_cross(basis.eval_matrix(g.points), g.weights);
}

}  // namespace fmed
