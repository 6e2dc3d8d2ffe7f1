#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmed/basis.hpp"
#include "fmed/coefficient.hpp"
#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"
#include "fmed/parallel.hpp"
#include "fmed/quadrature.hpp"

namespace fmed {

// How one covariate enters a function-on-function regression.
struct CovariateTermSpec {
  std::string name;
  ModelType type = ModelType::concurrent;
  Window window;                       // historical only
  BasisSystem basis_t;                 // t-dimension of the coefficient
  std::optional<BasisSystem> basis_s;  // s-dimension, historical only
  LinDiffOp op = LinDiffOp::curvature();
  double lambda = 0.0;    // concurrent
  double lambda_s = 0.0;  // historical
  double lambda_t = 0.0;  // historical

  static CovariateTermSpec concurrent(std::string name, BasisSystem basis, LinDiffOp op, double lambda) {
    CovariateTermSpec spec{std::move(name), ModelType::concurrent, Window{}, std::move(basis), std::nullopt, op,
                           lambda, 0.0, 0.0};
    spec.validate();
    return spec;
  }

  static CovariateTermSpec historical(std::string name, Window window, BasisSystem basis_s, BasisSystem basis_t,
                                      LinDiffOp op, double lambda_s, double lambda_t) {
    CovariateTermSpec spec{std::move(name), ModelType::historical, window, std::move(basis_t), std::move(basis_s),
                           op, 0.0, lambda_s, lambda_t};
    spec.validate();
    return spec;
  }

  std::size_t dim() const {
    const auto kt = static_cast<std::size_t>(basis_t.size());
    return type == ModelType::concurrent ? kt : kt * static_cast<std::size_t>(basis_s->size());
  }

  void validate() const {
    const auto nonneg = [&](double v, const char* what) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidArgument("term '" + name + "': " + what + " must be a nonnegative finite number");
      }
    };
    if (type == ModelType::concurrent) {
      if (basis_s) throw InvalidArgument("term '" + name + "': concurrent terms take no s-basis");
      nonneg(lambda, "lambda");
    } else {
      if (!basis_s) throw InvalidArgument("term '" + name + "': historical terms need an s-basis");
      if (std::isnan(window.delta) || window.delta < 0.0) {
        throw InvalidArgument("term '" + name + "': window width must be nonnegative");
      }
      nonneg(lambda_s, "lambda_s");
      nonneg(lambda_t, "lambda_t");
      check_capability(op, *basis_s);
    }
    check_capability(op, basis_t);
  }

  // Single smoothing level: lambda for concurrent terms, lambda_s = lambda_t
  // for historical ones.
  void set_smoothing(double value) {
    if (type == ModelType::concurrent) {
      lambda = value;
    } else {
      lambda_s = value;
      lambda_t = value;
    }
  }
};

// Evaluated bases and window realizations for a list of terms on one grid.
// Produces each subject's row block R(t_k) of the normal equations.
class DesignLayout {
 public:
  DesignLayout(std::vector<CovariateTermSpec> specs, const TimeGrid& grid) : grid_(grid), specs_(std::move(specs)) {
    if (specs_.empty()) throw InvalidArgument("regression needs at least one covariate");
    const Eigen::VectorXd times = grid.times();
    std::size_t offset = 0;
    for (const auto& spec : specs_) {
      spec.validate();
      offsets_.push_back(offset);
      offset += spec.dim();
      phi_t_.push_back(spec.basis_t.eval_matrix(times));
      if (spec.type == ModelType::historical) {
        phi_s_.push_back(spec.basis_s->eval_matrix(times));
        const SnappedWindow w = snap(spec.window, grid);
        if (w.adjusted) {
          warnings_.push_back("term '" + spec.name + "': window " + std::to_string(spec.window.delta) +
                              " snapped to " + std::to_string(w.delta));
        }
        windows_.push_back(w);
      } else {
        phi_s_.emplace_back();
        windows_.emplace_back();
      }
    }
    dim_ = offset;
  }

  const TimeGrid& grid() const { return grid_; }
  const std::vector<CovariateTermSpec>& specs() const { return specs_; }
  std::size_t n_terms() const { return specs_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t offset(std::size_t term) const { return offsets_[term]; }
  const SnappedWindow& window(std::size_t term) const { return windows_[term]; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // n x P design rows for one subject; curves in term order.
  Eigen::MatrixXd rows(const std::vector<Eigen::VectorXd>& curves) const {
    if (curves.size() != specs_.size()) throw ShapeError("one covariate curve per term is required");
    const auto n = static_cast<Eigen::Index>(grid_.size());
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(dim_));
    for (std::size_t j = 0; j < specs_.size(); ++j) {
      const Eigen::VectorXd& x = curves[j];
      if (x.size() != n) throw ShapeError("covariate curve does not match the grid");
      const auto off = static_cast<Eigen::Index>(offsets_[j]);
      const Eigen::MatrixXd& phi_t = phi_t_[j];
      if (specs_[j].type == ModelType::concurrent) {
        out.middleCols(off, phi_t.cols()) = x.asDiagonal() * phi_t;
        continue;
      }
      // X*(t_k) = integral over Omega_{t_k} of x(s) phi(s); row = eta(t_k)^T (x) X*(t_k).
      const Eigen::MatrixXd xs = x.asDiagonal() * phi_s_[j];
      Eigen::MatrixXd xstar(n, xs.cols());
      for (Eigen::Index c = 0; c < xs.cols(); ++c) xstar.col(c) = windowed_integrals(xs.col(c), grid_, windows_[j]);
      const Eigen::Index ks = xs.cols();
      for (Eigen::Index l = 0; l < phi_t.cols(); ++l) {
        out.middleCols(off + l * ks, ks) = phi_t.col(l).asDiagonal() * xstar;
      }
    }
    return out;
  }

 private:
  TimeGrid grid_;
  std::vector<CovariateTermSpec> specs_;
  std::vector<std::size_t> offsets_;
  std::vector<Eigen::MatrixXd> phi_t_;
  std::vector<Eigen::MatrixXd> phi_s_;
  std::vector<SnappedWindow> windows_;
  std::vector<std::string> warnings_;
  std::size_t dim_ = 0;
};

// Unit-lambda roughness pieces of one term. Concurrent: R = int (L phi)(L phi)^T.
// Historical: U = (int eta eta^T) (x) (int L phi L phi^T) and
// V = (int L eta L eta^T) (x) (int phi phi^T).
struct PenaltyParts {
  Eigen::MatrixXd roughness;  // concurrent
  Eigen::MatrixXd u;          // historical, s-direction
  Eigen::MatrixXd v;          // historical, t-direction
};

namespace detail {

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

}  // namespace detail

inline PenaltyParts penalty_parts(const CovariateTermSpec& spec, int refine) {
  PenaltyParts parts;
  if (spec.type == ModelType::concurrent) {
    parts.roughness = penalty_matrix(spec.basis_t, spec.op, refine);
    return parts;
  }
  const BasisSystem& bs = *spec.basis_s;
  const BasisSystem& bt = spec.basis_t;
  parts.u = detail::kron(gram_matrix(bt, refine), penalty_matrix(bs, spec.op, refine));
  parts.v = detail::kron(penalty_matrix(bt, spec.op, refine), gram_matrix(bs, refine));
  return parts;
}

class DesignCache;

// Normal equations (A + penalty) c = b for a set of subjects.
struct LinearSystem {
  std::shared_ptr<const DesignCache> cache;
  std::vector<std::size_t> subjects;
  std::vector<CovariateTermSpec> specs;
  Eigen::MatrixXd a;
  Eigen::VectorXd b;

  std::size_t dim() const { return static_cast<std::size_t>(b.size()); }
  // Block-diagonal penalty from the lambdas in `specs`.
  Eigen::MatrixXd penalty() const;
};

// Per-subject design rows and Gram contributions, computed once and summed
// over any subject multiset (folds, bootstrap resamples).
class DesignCache : public std::enable_shared_from_this<DesignCache> {
 public:
  struct Options {
    int refine = 4;
    int threads = 1;
  };

  static std::shared_ptr<const DesignCache> create(const std::vector<const FunctionalSample*>& covariates,
                                                   std::vector<CovariateTermSpec> specs, const FunctionalSample& y,
                                                   Options options) {
    return std::shared_ptr<const DesignCache>(new DesignCache(covariates, std::move(specs), y, options));
  }

  static std::shared_ptr<const DesignCache> create(const std::vector<const FunctionalSample*>& covariates,
                                                   std::vector<CovariateTermSpec> specs, const FunctionalSample& y) {
    return create(covariates, std::move(specs), y, Options{});
  }

  const DesignLayout& layout() const { return layout_; }
  const TimeGrid& grid() const { return layout_.grid(); }
  std::size_t n_subjects() const { return rows_.size(); }
  const Eigen::MatrixXd& rows(std::size_t i) const { return rows_[i]; }
  const Eigen::VectorXd& response(std::size_t i) const { return responses_[i]; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const std::vector<PenaltyParts>& penalties() const { return penalties_; }
  int refine() const { return refine_; }

  // Subject contributions are accumulated in extended precision and rounded
  // once, so the result does not depend on the order of `subjects`.
  LinearSystem system(const std::vector<std::size_t>& subjects) const {
    using WideMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using WideVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    const auto p = static_cast<Eigen::Index>(layout_.dim());
    WideMatrix a = WideMatrix::Zero(p, p);
    WideVector b = WideVector::Zero(p);
    for (std::size_t i : subjects) {
      if (i >= rows_.size()) throw InvalidArgument("subject index out of range");
      a += grams_[i].cast<long double>();
      b += cross_[i].cast<long double>();
    }
    return LinearSystem{shared_from_this(), subjects, layout_.specs(), a.cast<double>(), b.cast<double>()};
  }

  LinearSystem system() const {
    std::vector<std::size_t> all(rows_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return system(all);
  }

 private:
  DesignCache(const std::vector<const FunctionalSample*>& covariates, std::vector<CovariateTermSpec> specs,
              const FunctionalSample& y, Options options)
      : layout_((check_inputs(covariates, specs, y), std::move(specs)), y.grid()), refine_(options.refine) {
    const TimeGrid& grid = y.grid();
    const auto n = static_cast<Eigen::Index>(grid.size());
    weights_ = Eigen::VectorXd::Constant(n, grid.dt());
    weights_[0] = weights_[n - 1] = 0.5 * grid.dt();
    const std::size_t count = y.n_subjects();
    rows_.resize(count);
    grams_.resize(count);
    cross_.resize(count);
    responses_.resize(count);
    parallel_for(count, options.threads, [&](std::size_t i) {
      std::vector<Eigen::VectorXd> curves;
      curves.reserve(covariates.size());
      for (const auto* x : covariates) curves.push_back(x->subject(i));
      rows_[i] = layout_.rows(curves);
      responses_[i] = y.subject(i);
      const Eigen::MatrixXd weighted = weights_.asDiagonal() * rows_[i];
      const Eigen::MatrixXd raw = rows_[i].transpose() * weighted;
      grams_[i] = raw.selfadjointView<Eigen::Lower>();
      cross_[i] = weighted.transpose() * responses_[i];
    });
    for (const auto& spec : layout_.specs()) penalties_.push_back(penalty_parts(spec, refine_));
  }

  static int check_inputs(const std::vector<const FunctionalSample*>& covariates,
                          const std::vector<CovariateTermSpec>& specs, const FunctionalSample& y) {
    if (covariates.empty()) throw InvalidArgument("regression needs at least one covariate");
    if (covariates.size() != specs.size()) throw InvalidArgument("one term spec per covariate is required");
    for (std::size_t j = 0; j < covariates.size(); ++j) {
      validate_aligned({{"response", y}, {specs[j].name, *covariates[j]}});
    }
    return 0;
  }

  DesignLayout layout_;
  int refine_;
  Eigen::VectorXd weights_;
  std::vector<Eigen::MatrixXd> rows_;
  std::vector<Eigen::MatrixXd> grams_;
  std::vector<Eigen::VectorXd> cross_;
  std::vector<Eigen::VectorXd> responses_;
  std::vector<PenaltyParts> penalties_;
};

inline Eigen::MatrixXd LinearSystem::penalty() const {
  const auto p = static_cast<Eigen::Index>(dim());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
  const DesignLayout& layout = cache->layout();
  if (specs.size() != layout.n_terms()) throw ShapeError("term specs do not match the assembled system");
  for (std::size_t j = 0; j < specs.size(); ++j) {
    const auto off = static_cast<Eigen::Index>(layout.offset(j));
    const auto d = static_cast<Eigen::Index>(specs[j].dim());
    const PenaltyParts& parts = cache->penalties()[j];
    if (specs[j].type == ModelType::concurrent) {
      out.block(off, off, d, d) = specs[j].lambda * parts.roughness;
    } else {
      out.block(off, off, d, d) = specs[j].lambda_s * parts.u + specs[j].lambda_t * parts.v;
    }
  }
  return out;
}

struct Covariate {
  const FunctionalSample& sample;
  CovariateTermSpec spec;
};

inline LinearSystem assemble_system(const std::vector<Covariate>& covariates, const FunctionalSample& y,
                                    DesignCache::Options options = {}) {
  std::vector<const FunctionalSample*> samples;
  std::vector<CovariateTermSpec> specs;
  for (const auto& c : covariates) {
    samples.push_back(&c.sample);
    specs.push_back(c.spec);
  }
  return DesignCache::create(samples, std::move(specs), y, options)->system();
}

struct FitDiagnostics {
  double condition_estimate = 1.0;
  bool jitter_applied = false;
  double jitter = 0.0;
  double training_mspe = 0.0;
  std::vector<std::string> warnings;
};

struct FittedTerm {
  CovariateTermSpec spec;
  CoefficientEstimate estimate;
};

struct FittedRegression {
  TimeGrid grid;
  std::vector<FittedTerm> terms;
  Eigen::VectorXd coefficients;
  FitDiagnostics diagnostics;
};

// (1/N) sum_i int (a_i - b_i)^2 dt
inline double mspe(const FunctionalSample& predicted, const FunctionalSample& observed) {
  validate_aligned({{"prediction", predicted}, {"observation", observed}});
  double total = 0.0;
  for (std::size_t i = 0; i < observed.n_subjects(); ++i) {
    const Eigen::VectorXd d = predicted.subject(i) - observed.subject(i);
    total += integrate(d.cwiseAbs2(), observed.grid());
  }
  return total / static_cast<double>(observed.n_subjects());
}

namespace detail {

struct Solution {
  Eigen::VectorXd c;
  double condition = 1.0;
};

inline std::optional<Solution> try_solve(const Eigen::MatrixXd& m, const Eigen::VectorXd& b) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const double rcond = llt.rcond();
  if (!(rcond > 1e-15)) return std::nullopt;
  Eigen::VectorXd c = llt.solve(b);
  if (!c.allFinite()) return std::nullopt;
  return Solution{std::move(c), 1.0 / rcond};
}

inline double condition_number(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  return lo > 0.0 ? ev.maxCoeff() / lo : std::numeric_limits<double>::infinity();
}

}  // namespace detail

// Solves (A + penalty) c = b by Cholesky. A failed or numerically singular
// factorization is retried with ridge eps*I, eps = 1e-10 trace/P, growing by
// 100x for up to three retries; the ridge is reported in the diagnostics.
inline FittedRegression fit(const LinearSystem& system, const std::vector<CovariateTermSpec>& specs) {
  const DesignLayout& layout = system.cache->layout();
  LinearSystem sys = system;
  sys.specs = specs;
  for (const auto& spec : specs) spec.validate();
  for (std::size_t j = 0; j < specs.size(); ++j) {
    const auto off = static_cast<Eigen::Index>(layout.offset(j));
    const auto d = static_cast<Eigen::Index>(specs[j].dim());
    if (sys.a.block(off, off, d, d).trace() == 0.0) {
      throw SingularSystemError("design for term '" + specs[j].name + "' is identically zero",
                                std::numeric_limits<double>::infinity());
    }
  }
  const Eigen::MatrixXd m = sys.a + sys.penalty();
  const auto p = static_cast<Eigen::Index>(sys.dim());
  FitDiagnostics diag;
  diag.warnings = layout.warnings();
  std::optional<detail::Solution> sol = detail::try_solve(m, sys.b);
  if (!sol) {
    double eps = 1e-10 * m.trace() / static_cast<double>(p);
    for (int attempt = 0; attempt < 3 && !sol; ++attempt, eps *= 100.0) {
      sol = detail::try_solve(m + eps * Eigen::MatrixXd::Identity(p, p), sys.b);
      if (sol) {
        diag.jitter_applied = true;
        diag.jitter = eps;
      }
    }
  }
  if (!sol) {
    const double cond = detail::condition_number(m);
    throw SingularSystemError("penalized normal equations are singular (condition estimate " +
                                  std::to_string(cond) + ")",
                              cond);
  }
  diag.condition_estimate = sol->condition;

  const DesignCache& cache = *sys.cache;
  double sse = 0.0;
  for (std::size_t i : sys.subjects) {
    const Eigen::VectorXd r = cache.rows(i) * sol->c - cache.response(i);
    sse += integrate(r.cwiseAbs2(), cache.grid());
  }
  diag.training_mspe = sys.subjects.empty() ? 0.0 : sse / static_cast<double>(sys.subjects.size());

  FittedRegression out{cache.grid(), {}, sol->c, std::move(diag)};
  for (std::size_t j = 0; j < specs.size(); ++j) {
    const auto off = static_cast<Eigen::Index>(layout.offset(j));
    const auto d = static_cast<Eigen::Index>(specs[j].dim());
    const Eigen::VectorXd block = sol->c.segment(off, d);
    if (specs[j].type == ModelType::concurrent) {
      out.terms.push_back({specs[j], CurveEstimate{specs[j].basis_t, block}});
    } else {
      const Eigen::Index ks = specs[j].basis_s->size();
      const Eigen::Index kt = specs[j].basis_t.size();
      // vec(G) stacks the columns of the K_s x K_t matrix G.
      Eigen::MatrixXd g = Eigen::Map<const Eigen::MatrixXd>(block.data(), ks, kt);
      out.terms.push_back(
          {specs[j], SurfaceEstimate{*specs[j].basis_s, specs[j].basis_t, std::move(g), Window{layout.window(j).delta}}});
    }
  }
  return out;
}

inline FittedRegression fit(const LinearSystem& system) { return fit(system, system.specs); }

// Y_i(t_k) = sum over terms of the structural map applied to X_ij.
inline FunctionalSample predict(const FittedRegression& model, const std::vector<const FunctionalSample*>& covariates) {
  if (covariates.size() != model.terms.size()) {
    throw ShapeError("predict: " + std::to_string(covariates.size()) + " covariates for " +
                     std::to_string(model.terms.size()) + " fitted terms");
  }
  std::vector<CovariateTermSpec> specs;
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    if (covariates[j]->grid() != model.grid) {
      throw AlignmentError("predict: covariate '" + model.terms[j].spec.name + "' is not on the fitted grid");
    }
    validate_aligned({{model.terms[0].spec.name, *covariates[0]}, {model.terms[j].spec.name, *covariates[j]}});
    specs.push_back(model.terms[j].spec);
  }
  const DesignLayout layout(std::move(specs), model.grid);
  const std::size_t count = covariates[0]->n_subjects();
  CurveMatrix values(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(model.grid.size()));
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<Eigen::VectorXd> curves;
    for (const auto* x : covariates) curves.push_back(x->subject(i));
    values.row(static_cast<Eigen::Index>(i)) = (layout.rows(curves) * model.coefficients).transpose();
  }
  return FunctionalSample(model.grid, std::move(values), false, covariates[0]->ids());
}

// Roughness int (L theta)^2 of a fitted term; for surfaces the sum of the s-
// and t-direction penalties.
inline double roughness(const FittedTerm& term, int refine = 4) {
  const PenaltyParts parts = penalty_parts(term.spec, refine);
  if (const auto* curve = std::get_if<CurveEstimate>(&term.estimate)) {
    return curve->coeffs.dot(parts.roughness * curve->coeffs);
  }
  const auto& surface = std::get<SurfaceEstimate>(term.estimate);
  const Eigen::Map<const Eigen::VectorXd> vec(surface.coeffs.data(), surface.coeffs.size());
  return vec.dot(parts.u * vec) + vec.dot(parts.v * vec);
}

}  // namespace fmed
