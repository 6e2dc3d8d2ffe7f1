#pragma once

#include <Eigen/Dense>

#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "fmed/coefficient.hpp"
#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"
#include "fmed/parallel.hpp"
#include "fmed/regression.hpp"

namespace fmed {

// Paths: alpha (M on Z), gamma (Y on Z), beta (Y on M).
struct MediationSpec {
  CovariateTermSpec m_on_z;
  CovariateTermSpec y_on_z;
  CovariateTermSpec y_on_m;

  // "C-CH" = concurrent alpha, concurrent gamma, historical beta.
  std::string combo() const {
    const auto letter = [](const CovariateTermSpec& s) { return s.type == ModelType::concurrent ? 'C' : 'H'; };
    return std::string{letter(m_on_z), '-', letter(y_on_z), letter(y_on_m)};
  }

  void validate() const {
    m_on_z.validate();
    y_on_z.validate();
    y_on_m.validate();
  }
};

namespace detail {

inline bool same_structure(const CovariateTermSpec& a, const CovariateTermSpec& b) {
  return a.type == b.type && a.window == b.window && a.basis_t == b.basis_t && a.basis_s == b.basis_s &&
         a.op.kind == b.op.kind && a.op.omega == b.op.omega;
}

}  // namespace detail

struct FitOptions {
  bool center = true;
  int refine = 4;
  int threads = 1;
};

struct FittedMediation {
  MediationSpec spec;
  TimeGrid grid;
  CoefficientEstimate alpha;
  CoefficientEstimate gamma;
  CoefficientEstimate beta;
  FittedRegression mediator_fit;
  FittedRegression outcome_fit;
};

struct EffectCurves {
  TimeGrid grid;
  Eigen::VectorXd de;
  Eigen::VectorXd ie;
  Eigen::VectorXd z;
  Eigen::VectorXd z_prime;
};

// Centered data plus the cached designs of both regressions. Refits over any
// subject multiset (folds, bootstrap resamples) reuse the cached rows.
class MediationProblem {
 public:
  MediationProblem(const FunctionalSample& z, const FunctionalSample& m, const FunctionalSample& y,
                   MediationSpec spec, FitOptions options = {})
      : spec_(std::move(spec)),
        options_(options),
        z_(prepare(z, options.center)),
        m_(prepare(m, options.center)),
        y_(prepare(y, options.center)) {
    validate_aligned({{"Z", z}, {"M", m}, {"Y", y}});
    spec_.validate();
    const DesignCache::Options cache_options{options.refine, options.threads};
    mediator_ = DesignCache::create({&z_}, {spec_.m_on_z}, m_, cache_options);
    outcome_ = DesignCache::create({&z_, &m_}, {spec_.y_on_z, spec_.y_on_m}, y_, cache_options);
  }

  const MediationSpec& spec() const { return spec_; }
  const FitOptions& options() const { return options_; }
  const TimeGrid& grid() const { return z_.grid(); }
  std::size_t n_subjects() const { return z_.n_subjects(); }
  const FunctionalSample& z() const { return z_; }
  const FunctionalSample& m() const { return m_; }
  const FunctionalSample& y() const { return y_; }
  const DesignCache& mediator_cache() const { return *mediator_; }
  const DesignCache& outcome_cache() const { return *outcome_; }

  std::vector<std::size_t> all_subjects() const {
    std::vector<std::size_t> out(n_subjects());
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }

  // `smoothing` may differ from the problem's spec in its lambdas only.
  FittedMediation fit(const std::vector<std::size_t>& subjects, const MediationSpec& smoothing) const {
    if (!detail::same_structure(smoothing.m_on_z, spec_.m_on_z) ||
        !detail::same_structure(smoothing.y_on_z, spec_.y_on_z) ||
        !detail::same_structure(smoothing.y_on_m, spec_.y_on_m)) {
      throw InvalidArgument("refit spec differs from the assembled problem in more than its lambdas");
    }
    FittedRegression mediator = fmed::fit(mediator_->system(subjects), {smoothing.m_on_z});
    FittedRegression outcome = fmed::fit(outcome_->system(subjects), {smoothing.y_on_z, smoothing.y_on_m});
    CoefficientEstimate alpha = mediator.terms[0].estimate;
    CoefficientEstimate gamma = outcome.terms[0].estimate;
    CoefficientEstimate beta = outcome.terms[1].estimate;
    return FittedMediation{smoothing,        grid(),        std::move(alpha), std::move(gamma), std::move(beta),
                           std::move(mediator), std::move(outcome)};
  }

  FittedMediation fit(const std::vector<std::size_t>& subjects) const { return fit(subjects, spec_); }
  FittedMediation fit() const { return fit(all_subjects(), spec_); }

 private:
  static FunctionalSample prepare(const FunctionalSample& x, bool center_data) {
    return center_data && !x.centered() ? center(x) : x;
  }

  MediationSpec spec_;
  FitOptions options_;
  FunctionalSample z_;
  FunctionalSample m_;
  FunctionalSample y_;
  std::shared_ptr<const DesignCache> mediator_;
  std::shared_ptr<const DesignCache> outcome_;
};

inline FittedMediation fit_mediation(const FunctionalSample& z, const FunctionalSample& m, const FunctionalSample& y,
                                     const MediationSpec& spec, FitOptions options = {}) {
  return MediationProblem(z, m, y, spec, options).fit();
}

// The three path coefficients sampled on the observation grid.
struct PathGrids {
  CoefficientGrid alpha;
  CoefficientGrid gamma;
  CoefficientGrid beta;

  static PathGrids from_fit(const FittedMediation& fit) {
    return {sample_on_grid(fit.alpha, fit.grid), sample_on_grid(fit.gamma, fit.grid),
            sample_on_grid(fit.beta, fit.grid)};
  }
};

// DE(t) = gamma applied to z - z'; IE(t) = beta applied to (alpha applied to
// z - z'). The composition handles all concurrent/historical combinations.
inline EffectCurves effects(const PathGrids& paths, const Eigen::VectorXd& z, const Eigen::VectorXd& z_prime,
                            const TimeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (z.size() != n || z_prime.size() != n) {
    throw AlignmentError("contrast curves have " + std::to_string(z.size()) + " and " +
                         std::to_string(z_prime.size()) + " points but the grid has " + std::to_string(n));
  }
  const Eigen::VectorXd dz = z - z_prime;
  EffectCurves out{grid, apply_path(paths.gamma, dz, grid), apply_path(paths.beta, apply_path(paths.alpha, dz, grid), grid),
                   z, z_prime};
  return out;
}

inline EffectCurves effects(const FittedMediation& fit, const Eigen::VectorXd& z, const Eigen::VectorXd& z_prime) {
  return effects(PathGrids::from_fit(fit), z, z_prime, fit.grid);
}

inline EffectCurves direct_effect(const FittedMediation& fit, const Eigen::VectorXd& z,
                                  const Eigen::VectorXd& z_prime) {
  EffectCurves out = effects(fit, z, z_prime);
  out.ie = Eigen::VectorXd();
  return out;
}

inline EffectCurves indirect_effect(const FittedMediation& fit, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& z_prime) {
  EffectCurves out = effects(fit, z, z_prime);
  out.de = Eigen::VectorXd();
  return out;
}

// Row i holds the effect of subject i's own Z_i against zero.
struct SubjectEffects {
  TimeGrid grid;
  CurveMatrix de;
  CurveMatrix ie;
};

inline SubjectEffects per_subject_effects(const PathGrids& paths, const FunctionalSample& z, int threads = 1) {
  const TimeGrid& grid = z.grid();
  const auto rows = static_cast<Eigen::Index>(z.n_subjects());
  const auto n = static_cast<Eigen::Index>(grid.size());
  SubjectEffects out{grid, CurveMatrix(rows, n), CurveMatrix(rows, n)};
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  parallel_for(z.n_subjects(), threads, [&](std::size_t i) {
    const EffectCurves e = effects(paths, z.subject(i), zero, grid);
    out.de.row(static_cast<Eigen::Index>(i)) = e.de.transpose();
    out.ie.row(static_cast<Eigen::Index>(i)) = e.ie.transpose();
  });
  return out;
}

inline SubjectEffects per_subject_effects(const FittedMediation& fit, const FunctionalSample& z, int threads = 1) {
  if (z.grid() != fit.grid) throw AlignmentError("treatment curves are not on the fitted grid");
  return per_subject_effects(PathGrids::from_fit(fit), z, threads);
}

}  // namespace fmed
