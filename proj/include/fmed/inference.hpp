#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"
#include "fmed/mediation.hpp"
#include "fmed/parallel.hpp"
#include "fmed/quadrature.hpp"
#include "fmed/random.hpp"
#include "fmed/regression.hpp"

namespace fmed {

enum class BandMethod { percentile, bias_corrected };

inline std::string to_string(BandMethod method) {
  return method == BandMethod::percentile ? "percentile" : "bias_corrected";
}

struct Contrast {
  Eigen::VectorXd z;
  Eigen::VectorXd z_prime;
};

struct BootstrapOptions {
  std::size_t replicates = 500;
  std::uint64_t seed = 0;
  int threads = 1;
  double max_drop_fraction = 0.05;
};

// Replicate effect curves for one contrast; rows are kept replicates in
// replicate order.
struct BootstrapDraws {
  EffectCurves estimate;
  CurveMatrix de;
  CurveMatrix ie;
};

struct BootstrapRun {
  std::size_t requested = 0;
  std::size_t dropped = 0;
  std::uint64_t seed = 0;
  std::vector<BootstrapDraws> draws;  // one per contrast
};

// Resamples subjects with replacement, refits both regressions with the
// problem's lambdas and evaluates every contrast on each refit. Replicates
// whose systems stay singular are dropped and counted.
inline BootstrapRun bootstrap_draws(const MediationProblem& problem, const std::vector<Contrast>& contrasts,
                                    const BootstrapOptions& options) {
  if (options.replicates < 50) throw InvalidArgument("bootstrap needs at least 50 replicates");
  if (contrasts.empty()) throw InvalidArgument("bootstrap needs at least one contrast");
  const TimeGrid& grid = problem.grid();
  const std::size_t count = problem.n_subjects();
  const std::size_t reps = options.replicates;

  const PathGrids full = PathGrids::from_fit(problem.fit());

  std::vector<std::optional<std::vector<EffectCurves>>> slots(reps);
  parallel_for(reps, options.threads, [&](std::size_t b) {
    std::mt19937_64 rng = derived_rng(options.seed, b);
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    std::vector<std::size_t> subjects(count);
    for (auto& s : subjects) s = pick(rng);
    std::optional<FittedMediation> fitted;
    try {
      fitted = problem.fit(subjects);
    } catch (const SingularSystemError&) {
      return;
    }
    const PathGrids paths = PathGrids::from_fit(*fitted);
    std::vector<EffectCurves> out;
    out.reserve(contrasts.size());
    for (const auto& c : contrasts) out.push_back(effects(paths, c.z, c.z_prime, grid));
    slots[b] = std::move(out);
  });

  BootstrapRun run;
  run.requested = reps;
  run.seed = options.seed;
  for (const auto& s : slots) run.dropped += s ? 0 : 1;
  if (static_cast<double>(run.dropped) > options.max_drop_fraction * static_cast<double>(reps)) {
    throw SingularSystemError(std::to_string(run.dropped) + " of " + std::to_string(reps) +
                                  " bootstrap replicates were singular",
                              std::numeric_limits<double>::infinity());
  }
  const auto kept = static_cast<Eigen::Index>(reps - run.dropped);
  const auto n = static_cast<Eigen::Index>(grid.size());
  for (std::size_t c = 0; c < contrasts.size(); ++c) {
    BootstrapDraws d{effects(full, contrasts[c].z, contrasts[c].z_prime, grid), CurveMatrix(kept, n),
                     CurveMatrix(kept, n)};
    Eigen::Index row = 0;
    for (const auto& s : slots) {
      if (!s) continue;
      d.de.row(row) = (*s)[c].de.transpose();
      d.ie.row(row) = (*s)[c].ie.transpose();
      ++row;
    }
    run.draws.push_back(std::move(d));
  }
  return run;
}

struct Band {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct BootstrapBands {
  std::size_t replicates = 0;
  std::size_t dropped = 0;
  double level = 0.95;
  BandMethod method = BandMethod::percentile;
  std::uint64_t seed = 0;
  EffectCurves estimate;
  Band de;
  Band ie;
};

namespace detail {

// Sample quantile with linear interpolation between order statistics
// (h = (n - 1) p).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = static_cast<double>(sorted.size() - 1) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline Band band(const CurveMatrix& draws, const Eigen::VectorXd& estimate, double level, BandMethod method) {
  const boost::math::normal normal;
  const double alpha = 1.0 - level;
  const auto n = draws.cols();
  const auto reps = static_cast<double>(draws.rows());
  Band out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  std::vector<double> column(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index b = 0; b < draws.rows(); ++b) column[static_cast<std::size_t>(b)] = draws(b, k);
    std::sort(column.begin(), column.end());
    double p_lo = alpha / 2.0;
    double p_hi = 1.0 - alpha / 2.0;
    if (method == BandMethod::bias_corrected) {
      const double est = estimate[k];
      const auto below = static_cast<double>(std::lower_bound(column.begin(), column.end(), est) - column.begin());
      const auto equal =
          static_cast<double>(std::upper_bound(column.begin(), column.end(), est) - column.begin()) - below;
      const double frac = std::clamp((below + 0.5 * equal) / reps, 0.5 / reps, 1.0 - 0.5 / reps);
      const double z0 = boost::math::quantile(normal, frac);
      if (z0 != 0.0) {
        p_lo = boost::math::cdf(normal, 2.0 * z0 + boost::math::quantile(normal, alpha / 2.0));
        p_hi = boost::math::cdf(normal, 2.0 * z0 + boost::math::quantile(normal, 1.0 - alpha / 2.0));
      }
    }
    out.lower[k] = quantile_sorted(column, p_lo);
    out.upper[k] = quantile_sorted(column, p_hi);
  }
  return out;
}

}  // namespace detail

inline BootstrapBands bands(const BootstrapRun& run, std::size_t contrast, double level, BandMethod method) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("band level must lie in (0, 1)");
  const BootstrapDraws& d = run.draws.at(contrast);
  return BootstrapBands{run.requested,
                        run.dropped,
                        level,
                        method,
                        run.seed,
                        d.estimate,
                        detail::band(d.de, d.estimate.de, level, method),
                        detail::band(d.ie, d.estimate.ie, level, method)};
}

inline BootstrapBands bootstrap_effects(const MediationProblem& problem, const Contrast& contrast, double level,
                                        BandMethod method, const BootstrapOptions& options) {
  return bands(bootstrap_draws(problem, {contrast}, options), 0, level, method);
}

struct CvOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  int threads = 1;
  // Lambda values; empty selects the default 9-point log grid 1e-4 ... 1e4
  // scaled per term by trace(A_j) / trace(P_j).
  std::vector<double> grid;
  std::size_t max_axis = 9;
};

// Near-equal folds from a seeded permutation of subjects.
inline std::vector<std::size_t> assign_folds(std::size_t n_subjects, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw InvalidArgument("cross-validation needs at least 2 folds");
  if (n_subjects < folds) {
    throw InvalidArgument("cannot split " + std::to_string(n_subjects) + " subjects into " + std::to_string(folds) +
                          " folds");
  }
  std::vector<std::size_t> order(n_subjects);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng = derived_rng(seed, 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> fold_of(n_subjects);
  for (std::size_t r = 0; r < n_subjects; ++r) fold_of[order[r]] = r % folds;
  return fold_of;
}

struct CvResult {
  std::vector<std::vector<double>> candidates;  // one lambda per term
  Eigen::MatrixXd fold_mspe;                    // candidates x folds
  Eigen::VectorXd mean_mspe;
  std::size_t selected = 0;
  std::vector<double> selected_lambda;
  std::vector<std::size_t> fold_of;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> default_multipliers() {
  std::vector<double> out;
  for (int e = -4; e <= 4; ++e) out.push_back(std::pow(10.0, e));
  return out;
}

// Keeps at most `cap` points, evenly spread and including both ends.
inline std::vector<double> thin(const std::vector<double>& grid, std::size_t cap) {
  if (grid.size() <= cap || cap < 2) return grid;
  std::vector<double> out;
  for (std::size_t i = 0; i < cap; ++i) {
    out.push_back(grid[static_cast<std::size_t>(std::llround(static_cast<double>(i) *
                                                             static_cast<double>(grid.size() - 1) /
                                                             static_cast<double>(cap - 1)))]);
  }
  return out;
}

inline double term_scale(const DesignCache& cache, const LinearSystem& full, std::size_t term) {
  const DesignLayout& layout = cache.layout();
  const auto off = static_cast<Eigen::Index>(layout.offset(term));
  const auto d = static_cast<Eigen::Index>(layout.specs()[term].dim());
  const PenaltyParts& parts = cache.penalties()[term];
  const double pen = layout.specs()[term].type == ModelType::concurrent ? parts.roughness.trace()
                                                                         : parts.u.trace() + parts.v.trace();
  const double a = full.a.block(off, off, d, d).trace();
  return pen > 0.0 && a > 0.0 ? a / pen : 1.0;
}

inline std::vector<CovariateTermSpec> with_lambdas(std::vector<CovariateTermSpec> specs,
                                                   const std::vector<double>& lambdas) {
  for (std::size_t j = 0; j < specs.size(); ++j) specs[j].set_smoothing(lambdas[j]);
  return specs;
}

// Mean over the given subjects of the integrated squared residual.
inline double subject_mspe(const DesignCache& cache, const Eigen::VectorXd& coeffs,
                           const std::vector<std::size_t>& subjects) {
  double total = 0.0;
  for (std::size_t i : subjects) {
    const Eigen::VectorXd r = cache.rows(i) * coeffs - cache.response(i);
    total += integrate(r.cwiseAbs2(), cache.grid());
  }
  return total / static_cast<double>(subjects.size());
}

inline CvResult cross_validate(const DesignCache& cache, const std::vector<CovariateTermSpec>& specs,
                               std::vector<std::vector<double>> candidates, const CvOptions& options) {
  if (candidates.empty()) throw InvalidArgument("lambda grid is empty");
  CvResult out;
  out.seed = options.seed;
  out.fold_of = assign_folds(cache.n_subjects(), options.folds, options.seed);
  const std::size_t folds = options.folds;
  std::vector<std::vector<std::size_t>> train(folds);
  std::vector<std::vector<std::size_t>> test(folds);
  for (std::size_t i = 0; i < cache.n_subjects(); ++i) {
    for (std::size_t f = 0; f < folds; ++f) (out.fold_of[i] == f ? test : train)[f].push_back(i);
  }
  std::vector<LinearSystem> systems;
  for (std::size_t f = 0; f < folds; ++f) systems.push_back(cache.system(train[f]));

  out.fold_mspe.resize(static_cast<Eigen::Index>(candidates.size()), static_cast<Eigen::Index>(folds));
  parallel_for(candidates.size() * folds, options.threads, [&](std::size_t task) {
    const std::size_t c = task / folds;
    const std::size_t f = task % folds;
    double value = std::numeric_limits<double>::infinity();
    try {
      const FittedRegression fitted = fit(systems[f], with_lambdas(specs, candidates[c]));
      value = subject_mspe(cache, fitted.coefficients, test[f]);
    } catch (const SingularSystemError&) {
    }
    out.fold_mspe(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(f)) = value;
  });
  out.mean_mspe = out.fold_mspe.rowwise().mean();

  const auto weight = [&](std::size_t c) { return std::accumulate(candidates[c].begin(), candidates[c].end(), 0.0); };
  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const double m = out.mean_mspe[static_cast<Eigen::Index>(c)];
    const double b = out.mean_mspe[static_cast<Eigen::Index>(best)];
    if (m < b || (m == b && weight(c) > weight(best))) best = c;
  }
  out.selected = best;
  out.selected_lambda = candidates[best];
  out.candidates = std::move(candidates);
  return out;
}

}  // namespace detail

// Lambda search for one regression. A single term gets a scalar grid; two
// terms (the outcome model) are searched jointly on the product grid with each
// axis thinned to at most `max_axis` points; more terms share one level.
// Candidate lambda_j = g * scale_j, where scale_j is 1 for an explicit grid
// and trace(A_j) / trace(P_j) for the default grid.
inline CvResult cross_validate_lambda(const DesignCache& cache, const CvOptions& options) {
  const auto& specs = cache.layout().specs();
  const bool scaled = options.grid.empty();
  const std::vector<double> grid = scaled ? detail::default_multipliers() : options.grid;
  const LinearSystem full = cache.system();
  std::vector<double> scale;
  for (std::size_t j = 0; j < specs.size(); ++j) scale.push_back(scaled ? detail::term_scale(cache, full, j) : 1.0);
  std::vector<std::vector<double>> candidates;
  if (specs.size() == 2) {
    const std::vector<double> axis = detail::thin(grid, options.max_axis);
    for (double g0 : axis) {
      for (double g1 : axis) candidates.push_back({g0 * scale[0], g1 * scale[1]});
    }
  } else {
    for (double g : grid) {
      std::vector<double> point;
      for (double sc : scale) point.push_back(g * sc);
      candidates.push_back(std::move(point));
    }
  }
  return detail::cross_validate(cache, specs, std::move(candidates), options);
}

struct MediationCv {
  CvResult mediator;
  CvResult outcome;
  MediationSpec selected;
};

inline MediationCv cross_validate_lambda(const MediationProblem& problem, const CvOptions& options) {
  MediationCv out{cross_validate_lambda(problem.mediator_cache(), options),
                  cross_validate_lambda(problem.outcome_cache(), options), problem.spec()};
  out.selected.m_on_z.set_smoothing(out.mediator.selected_lambda[0]);
  out.selected.y_on_z.set_smoothing(out.outcome.selected_lambda[0]);
  out.selected.y_on_m.set_smoothing(out.outcome.selected_lambda[1]);
  return out;
}

// The base term with its window replaced: delta = 0 gives a concurrent term on
// basis_t, anything else a historical term (basis_s defaults to basis_t).
inline CovariateTermSpec with_window(const CovariateTermSpec& base, const Window& window) {
  const double lambda = base.type == ModelType::concurrent ? base.lambda : base.lambda_t;
  if (window.delta == 0.0) return CovariateTermSpec::concurrent(base.name, base.basis_t, base.op, lambda);
  const double lambda_s = base.type == ModelType::concurrent ? base.lambda : base.lambda_s;
  return CovariateTermSpec::historical(base.name, window, base.basis_s.value_or(base.basis_t), base.basis_t,
                                       base.op, lambda_s, lambda);
}

struct DeltaGrids {
  std::vector<Window> m_z;
  std::vector<Window> y_z;
  std::vector<Window> y_m;
};

struct DeltaSelection {
  DeltaGrids grids;
  Eigen::VectorXd m_mspe;  // per delta_MZ
  Eigen::MatrixXd y_mspe;  // rows delta_YM, columns delta_YZ
  Window m_z;
  Window y_z;
  Window y_m;
};

// Cross-validated MSPE of the mediator model per delta_MZ and of the outcome
// model per (delta_YZ, delta_YM), all on the same folds with the base lambdas.
// With `tune_lambda`, each candidate's MSPE is the best over its own lambda
// search (cross_validate_lambda) instead of using the base lambdas.
inline DeltaSelection select_delta(const FunctionalSample& z, const FunctionalSample& m, const FunctionalSample& y,
                                   const MediationSpec& base, const DeltaGrids& grids, const CvOptions& cv,
                                   const FitOptions& fit_options = {}, bool tune_lambda = false) {
  if (grids.m_z.empty() || grids.y_z.empty() || grids.y_m.empty()) throw InvalidArgument("window grids must be non-empty");
  for (const auto* g : {&grids.m_z, &grids.y_z, &grids.y_m}) {
    for (const Window& w : *g) {
      if (std::isnan(w.delta) || w.delta < 0.0) throw InvalidArgument("window candidates must be nonnegative");
    }
  }
  validate_aligned({{"Z", z}, {"M", m}, {"Y", y}});
  const auto prepare = [&](const FunctionalSample& x) {
    return fit_options.center && !x.centered() ? center(x) : x;
  };
  const FunctionalSample zc = prepare(z);
  const FunctionalSample mc = prepare(m);
  const FunctionalSample yc = prepare(y);
  const DesignCache::Options cache_options{fit_options.refine, fit_options.threads};
  CvOptions single = cv;
  single.threads = fit_options.threads;

  const auto score = [&](std::vector<const FunctionalSample*> covariates, std::vector<CovariateTermSpec> specs,
                         const FunctionalSample& response) {
    std::vector<double> lambdas;
    for (const auto& s : specs) lambdas.push_back(s.type == ModelType::concurrent ? s.lambda : s.lambda_t);
    const auto cache = DesignCache::create(covariates, std::move(specs), response, cache_options);
    if (tune_lambda) {
      const CvResult r = cross_validate_lambda(*cache, single);
      return r.mean_mspe[static_cast<Eigen::Index>(r.selected)];
    }
    return detail::cross_validate(*cache, cache->layout().specs(), {lambdas}, single).mean_mspe[0];
  };

  DeltaSelection out{grids, Eigen::VectorXd(static_cast<Eigen::Index>(grids.m_z.size())),
                     Eigen::MatrixXd(static_cast<Eigen::Index>(grids.y_m.size()),
                                     static_cast<Eigen::Index>(grids.y_z.size())),
                     {}, {}, {}};
  for (std::size_t a = 0; a < grids.m_z.size(); ++a) {
    out.m_mspe[static_cast<Eigen::Index>(a)] = score({&zc}, {with_window(base.m_on_z, grids.m_z[a])}, mc);
  }
  for (std::size_t r = 0; r < grids.y_m.size(); ++r) {
    for (std::size_t c = 0; c < grids.y_z.size(); ++c) {
      out.y_mspe(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          score({&zc, &mc}, {with_window(base.y_on_z, grids.y_z[c]), with_window(base.y_on_m, grids.y_m[r])}, yc);
    }
  }
  Eigen::Index a = 0;
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  out.m_mspe.minCoeff(&a);
  out.y_mspe.minCoeff(&r, &c);
  out.m_z = grids.m_z[static_cast<std::size_t>(a)];
  out.y_m = grids.y_m[static_cast<std::size_t>(r)];
  out.y_z = grids.y_z[static_cast<std::size_t>(c)];
  return out;
}

}  // namespace fmed
