#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fmed/coefficient.hpp"
#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"
#include "fmed/mediation.hpp"
#include "fmed/parallel.hpp"
#include "fmed/quadrature.hpp"
#include "fmed/random.hpp"

namespace fmed {

// Sampled haemodynamic response on [0, 32] s.
struct Hrf {
  double dt = 0.1;
  Eigen::VectorXd values;

  double duration() const { return dt * static_cast<double>(values.size() - 1); }
};

// Double gamma t^5 e^-t / 5! - (1/6) t^15 e^-t / 15!, scaled to peak 1.
inline Hrf canonical_hrf(double dt_hrf = 0.1) {
  if (!(dt_hrf > 0.0 && dt_hrf <= 0.5)) throw InvalidArgument("HRF resolution must lie in (0, 0.5]");
  const auto steps = static_cast<Eigen::Index>(std::llround(32.0 / dt_hrf));
  Hrf h{dt_hrf, Eigen::VectorXd(steps + 1)};
  const auto gamma_pdf = [](double t, double shape) {
    return t <= 0.0 ? 0.0 : std::exp((shape - 1.0) * std::log(t) - t - std::lgamma(shape));
  };
  for (Eigen::Index k = 0; k <= steps; ++k) {
    const double t = dt_hrf * static_cast<double>(k);
    h.values[k] = gamma_pdf(t, 6.0) - gamma_pdf(t, 16.0) / 6.0;
  }
  h.values /= h.values.maxCoeff();
  return h;
}

struct EventDesign {
  std::vector<double> onsets;
  std::vector<int> conditions;  // 1 = case, 0 = control
  double iti = 40.0;
};

// Onsets 0, iti, 2 iti, ... below `duration`; conditions Bernoulli(p_case).
inline EventDesign gen_design(double duration, double iti, double p_case, std::uint64_t seed) {
  if (!(iti > 0.0)) throw InvalidArgument("inter-trial interval must be positive");
  if (!(p_case >= 0.0 && p_case <= 1.0)) throw InvalidArgument("case probability must lie in [0, 1]");
  std::mt19937_64 rng = derived_rng(seed, 0);
  std::bernoulli_distribution coin(p_case);
  EventDesign d;
  d.iti = iti;
  for (long e = 0; static_cast<double>(e) * iti < duration; ++e) {
    d.onsets.push_back(static_cast<double>(e) * iti);
    d.conditions.push_back(coin(rng) ? 1 : 0);
  }
  return d;
}

namespace detail {

// h(lag) read off the HRF's own grid; zero outside [0, duration].
inline double hrf_at(const Hrf& hrf, double lag) {
  if (lag < 0.0) return 0.0;
  const double pos = lag / hrf.dt;
  const auto idx = static_cast<Eigen::Index>(std::llround(pos));
  if (std::abs(pos - static_cast<double>(idx)) > 1e-6) {
    throw InvalidArgument("lag " + std::to_string(lag) + " s is not on the HRF grid (dt " + std::to_string(hrf.dt) +
                          ")");
  }
  return idx < hrf.values.size() ? hrf.values[idx] : 0.0;
}

}  // namespace detail

// Z(t_k) = sum_e amplitude_e h(t_k - onset_e) with amplitudes given per event.
inline Eigen::VectorXd convolve_amplitudes(const std::vector<double>& onsets, const std::vector<double>& amplitudes,
                                           const Hrf& hrf, const TimeGrid& grid) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t e = 0; e < onsets.size(); ++e) {
    if (amplitudes[e] == 0.0) continue;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      z[static_cast<Eigen::Index>(k)] += amplitudes[e] * detail::hrf_at(hrf, grid.time(k) - onsets[e]);
    }
  }
  return z;
}

inline FunctionalSample convolve_design(const EventDesign& design, const Hrf& hrf, const TimeGrid& grid) {
  std::vector<double> amplitudes(design.conditions.begin(), design.conditions.end());
  CurveMatrix row = convolve_amplitudes(design.onsets, amplitudes, hrf, grid).transpose();
  return FunctionalSample(grid, std::move(row));
}

// One true path: a curve theta(t) or a surface theta(s, t) on a window.
struct TruePath {
  ModelType type = ModelType::concurrent;
  std::function<double(double)> curve;
  std::function<double(double, double)> surface;
  Window window;

  static TruePath concurrent(std::function<double(double)> f) {
    return {ModelType::concurrent, std::move(f), {}, Window{}};
  }
  static TruePath historical(std::function<double(double, double)> f, Window window) {
    return {ModelType::historical, {}, std::move(f), window};
  }

  CoefficientGrid on_grid(const TimeGrid& grid) const {
    if (type == ModelType::concurrent) return CoefficientGrid::from_function(curve, grid);
    return CoefficientGrid::from_function(surface, grid, snap(window, grid));
  }
};

struct SimTruth {
  std::string label;
  TruePath alpha;
  TruePath gamma;
  TruePath beta;
  double noise_m = 1.0;
  double noise_y = 1.0;

  // alpha = sin(2 pi t/T), beta = cos(2 pi t/T) - t/T, gamma = -sin(2 pi t/T).
  static SimTruth benchmark_concurrent(double period = 300.0) {
    const double w = 2.0 * std::numbers::pi / period;
    return {"concurrent",
            TruePath::concurrent([w](double t) { return std::sin(w * t); }),
            TruePath::concurrent([w](double t) { return -std::sin(w * t); }),
            TruePath::concurrent([w, period](double t) { return std::cos(w * t) - t / period; }),
            1.0,
            1.0};
  }

  static SimTruth benchmark_historical(double delta = 6.0, double period = 300.0) {
    const double w = 2.0 * std::numbers::pi / (2.0 * period);
    const double h = 2.0 * period;
    const Window win{delta};
    return {"historical",
            TruePath::historical([w, h](double s, double t) { return std::sin(w * (s + t)) + (s - t) / h; }, win),
            TruePath::historical([w, h](double s, double t) { return -std::sin(w * (s + t)) + (s - t) / h; }, win),
            TruePath::historical([w, h](double s, double t) { return std::cos(w * (s - t)) - (s + t) / h; }, win),
            1.0,
            1.0};
  }

  PathGrids on_grid(const TimeGrid& grid) const { return {alpha.on_grid(grid), gamma.on_grid(grid), beta.on_grid(grid)}; }
};

struct DesignOptions {
  double iti = 40.0;
  double p_case = 0.5;
  double hrf_dt = 0.1;
};

struct SimDataset {
  FunctionalSample z;
  FunctionalSample m;
  FunctionalSample y;
  SimTruth truth;
  std::vector<EventDesign> designs;  // one per subject
  std::uint64_t seed = 0;
};

// Each subject gets its own design and noise from stream (seed, i):
//   M = alpha(Z) + e1,  Y = gamma(Z) + beta(M) + e2.
inline SimDataset gen_dataset(const SimTruth& truth, std::size_t n_subjects, const TimeGrid& grid,
                              std::uint64_t seed, const DesignOptions& options = {}, int threads = 1) {
  if (n_subjects < 1) throw InvalidArgument("simulation needs at least one subject");
  if (!(truth.noise_m >= 0.0) || !(truth.noise_y >= 0.0)) throw InvalidArgument("noise sd must be nonnegative");
  const Hrf hrf = canonical_hrf(options.hrf_dt);
  const PathGrids paths = truth.on_grid(grid);
  const auto rows = static_cast<Eigen::Index>(n_subjects);
  const auto n = static_cast<Eigen::Index>(grid.size());
  CurveMatrix z(rows, n);
  CurveMatrix m(rows, n);
  CurveMatrix y(rows, n);
  std::vector<EventDesign> designs(n_subjects);
  parallel_for(n_subjects, threads, [&](std::size_t i) {
    std::mt19937_64 rng = derived_rng(seed, i);
    designs[i] = gen_design(grid.domain_length(), options.iti, options.p_case, rng());
    std::vector<double> amplitudes(designs[i].conditions.begin(), designs[i].conditions.end());
    const Eigen::VectorXd zi = convolve_amplitudes(designs[i].onsets, amplitudes, hrf, grid);
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::VectorXd mi = apply_path(paths.alpha, zi, grid);
    for (Eigen::Index k = 0; k < n; ++k) mi[k] += truth.noise_m * noise(rng);
    Eigen::VectorXd yi = apply_path(paths.gamma, zi, grid) + apply_path(paths.beta, mi, grid);
    for (Eigen::Index k = 0; k < n; ++k) yi[k] += truth.noise_y * noise(rng);
    const auto r = static_cast<Eigen::Index>(i);
    z.row(r) = zi.transpose();
    m.row(r) = mi.transpose();
    y.row(r) = yi.transpose();
  });
  return SimDataset{FunctionalSample(grid, std::move(z)), FunctionalSample(grid, std::move(m)),
                    FunctionalSample(grid, std::move(y)), truth, std::move(designs), seed};
}

inline EffectCurves true_effects(const SimTruth& truth, const Eigen::VectorXd& z, const Eigen::VectorXd& z_prime,
                                 const TimeGrid& grid) {
  return effects(truth.on_grid(grid), z, z_prime, grid);
}

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double bias = 0.0;
};

struct MetricReport {
  Metrics ie;
  Metrics de;
  Metrics alpha;
  Metrics beta;
  Metrics gamma;
};

// MSE = (1/N) sum_i int (a_i - b_i)^2, MAE = (1/N) sum_i int |a_i - b_i|,
// Bias = int |mean_i a_i - mean_i b_i|.
inline Metrics score(const CurveMatrix& estimated, const CurveMatrix& truth, const TimeGrid& grid) {
  if (estimated.rows() != truth.rows() || estimated.cols() != truth.cols()) {
    throw ShapeError("score: estimate is " + std::to_string(estimated.rows()) + "x" +
                     std::to_string(estimated.cols()) + " but truth is " + std::to_string(truth.rows()) + "x" +
                     std::to_string(truth.cols()));
  }
  if (static_cast<std::size_t>(truth.cols()) != grid.size()) throw ShapeError("score: curves do not match the grid");
  if (truth.rows() < 1) throw ShapeError("score needs at least one curve");
  Metrics out;
  for (Eigen::Index i = 0; i < truth.rows(); ++i) {
    const Eigen::VectorXd d = (estimated.row(i) - truth.row(i)).transpose();
    out.mse += integrate(d.cwiseAbs2(), grid);
    out.mae += integrate(d.cwiseAbs(), grid);
  }
  const auto count = static_cast<double>(truth.rows());
  out.mse /= count;
  out.mae /= count;
  const Eigen::VectorXd mean_diff = (estimated.colwise().mean() - truth.colwise().mean()).transpose();
  out.bias = integrate(mean_diff.cwiseAbs(), grid);
  return out;
}

// Coefficient error over the support: a curve over [t_0, t_{n-1}]; a surface
// over its band, integrating in s within each window and then over t.
inline Metrics score(const CoefficientGrid& estimated, const CoefficientGrid& truth, const TimeGrid& grid) {
  if (estimated.type != truth.type) throw ShapeError("score: coefficient types differ");
  if (truth.type == ModelType::concurrent) {
    return score(CurveMatrix(estimated.curve.transpose()), CurveMatrix(truth.curve.transpose()), grid);
  }
  if (estimated.window.steps != truth.window.steps) throw ShapeError("score: coefficient windows differ");
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::VectorXd sq(n);
  Eigen::VectorXd ab(n);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto diff = [&](std::size_t j, std::size_t kk) {
      return estimated.surface(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(kk)) -
             truth.surface(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(kk));
    };
    sq[static_cast<Eigen::Index>(k)] =
        window_integral([&](std::size_t j, std::size_t kk) { return std::pow(diff(j, kk), 2); }, k, truth.window,
                        grid.dt());
    ab[static_cast<Eigen::Index>(k)] =
        window_integral([&](std::size_t j, std::size_t kk) { return std::abs(diff(j, kk)); }, k, truth.window,
                        grid.dt());
  }
  const double mae = integrate(ab, grid);
  return {integrate(sq, grid), mae, mae};
}

// Band (or curve) integral of theta^2, the normaliser for relative errors.
inline double squared_norm(const CoefficientGrid& coef, const TimeGrid& grid) {
  CoefficientGrid zero = coef;
  zero.curve.setZero();
  zero.surface.setZero();
  return score(coef, zero, grid).mse;
}

inline MetricReport score_fit(const FittedMediation& fit, const SimDataset& data) {
  const TimeGrid& grid = data.z.grid();
  const PathGrids est = PathGrids::from_fit(fit);
  const PathGrids tru = data.truth.on_grid(grid);
  const SubjectEffects e = per_subject_effects(est, data.z);
  const SubjectEffects t = per_subject_effects(tru, data.z);
  return {score(e.ie, t.ie, grid), score(e.de, t.de, grid), score(est.alpha, tru.alpha, grid),
          score(est.beta, tru.beta, grid), score(est.gamma, tru.gamma, grid)};
}

// Static (time-invariant) mediation estimate from a multilevel baseline.
struct BaselineResult {
  double ie = 0.0;
  double de = 0.0;
  double ie_se = 0.0;
  double de_se = 0.0;
  bool ie_significant = false;
  bool de_significant = false;
  std::size_t used = 0;
  std::size_t dropped = 0;
};

namespace detail {

struct PathTriple {
  double a;
  double b;
  double c;
};

// OLS with intercept; nullopt when the design is rank deficient.
inline std::optional<Eigen::VectorXd> ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < x.cols()) return std::nullopt;
  return Eigen::VectorXd(qr.solve(y));
}

// a from m ~ 1 + z; (c', b) from y ~ 1 + z + m.
inline std::optional<PathTriple> path_triple(const Eigen::VectorXd& z, const Eigen::VectorXd& m,
                                             const Eigen::VectorXd& y) {
  const Eigen::Index n = z.size();
  Eigen::MatrixXd xm(n, 2);
  xm << Eigen::VectorXd::Ones(n), z;
  Eigen::MatrixXd xy(n, 3);
  xy << Eigen::VectorXd::Ones(n), z, m;
  const auto fm = ols(xm, m);
  const auto fy = ols(xy, y);
  if (!fm || !fy) return std::nullopt;
  return PathTriple{(*fm)[1], (*fy)[2], (*fy)[1]};
}

// IE = mean(a) mean(b) + cov(a, b), DE = mean(c').
inline std::pair<double, double> kkb_point(const std::vector<PathTriple>& t, const std::vector<std::size_t>& idx) {
  const auto count = static_cast<double>(idx.size());
  double ma = 0.0;
  double mb = 0.0;
  double mc = 0.0;
  for (std::size_t i : idx) {
    ma += t[i].a;
    mb += t[i].b;
    mc += t[i].c;
  }
  ma /= count;
  mb /= count;
  mc /= count;
  double cov = 0.0;
  for (std::size_t i : idx) cov += (t[i].a - ma) * (t[i].b - mb);
  cov /= count - 1.0;
  return {ma * mb + cov, mc};
}

inline BaselineResult kkb_from_triples(const std::vector<std::optional<PathTriple>>& per_subject,
                                       std::size_t replicates, std::uint64_t seed) {
  std::vector<PathTriple> t;
  for (const auto& p : per_subject) {
    if (p) t.push_back(*p);
  }
  BaselineResult out;
  out.used = t.size();
  out.dropped = per_subject.size() - t.size();
  if (static_cast<double>(out.dropped) > 0.1 * static_cast<double>(per_subject.size())) {
    throw SingularSystemError(std::to_string(out.dropped) + " of " + std::to_string(per_subject.size()) +
                                  " subjects have singular path regressions",
                              std::numeric_limits<double>::infinity());
  }
  if (t.size() < 3) throw InvalidArgument("multilevel mediation needs at least 3 subjects");
  std::vector<std::size_t> all(t.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::tie(out.ie, out.de) = kkb_point(t, all);
  if (replicates == 0) return out;

  std::vector<double> ie(replicates);
  std::vector<double> de(replicates);
  std::vector<std::size_t> idx(t.size());
  for (std::size_t b = 0; b < replicates; ++b) {
    std::mt19937_64 rng = derived_rng(seed, b);
    std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
    for (auto& i : idx) i = pick(rng);
    std::tie(ie[b], de[b]) = kkb_point(t, idx);
  }
  const auto summarize = [&](std::vector<double>& v, double& se, bool& significant) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    se = std::sqrt(ss / static_cast<double>(v.size() - 1));
    std::sort(v.begin(), v.end());
    const auto q = [&](double p) {
      const double h = static_cast<double>(v.size() - 1) * p;
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const std::size_t hi = std::min(lo + 1, v.size() - 1);
      return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    significant = q(0.025) > 0.0 || q(0.975) < 0.0;
  };
  summarize(ie, out.ie_se, out.ie_significant);
  summarize(de, out.de_se, out.de_significant);
  return out;
}

}  // namespace detail

// Multilevel mediation treating every time point as a trial: per-subject OLS
// paths, population effects, bootstrap SE and a 95% percentile significance
// flag from `replicates` subject resamples.
inline BaselineResult kkb_baseline(const FunctionalSample& z, const FunctionalSample& m, const FunctionalSample& y,
                                   std::size_t replicates, std::uint64_t seed) {
  validate_aligned({{"Z", z}, {"M", m}, {"Y", y}});
  if (z.n_subjects() < 3) throw InvalidArgument("multilevel mediation needs at least 3 subjects");
  std::vector<std::optional<detail::PathTriple>> triples;
  for (std::size_t i = 0; i < z.n_subjects(); ++i) triples.push_back(detail::path_triple(z.subject(i), m.subject(i), y.subject(i)));
  return detail::kkb_from_triples(triples, replicates, seed);
}

inline BaselineResult kkb_baseline(const SimDataset& data, std::size_t replicates, std::uint64_t seed) {
  return kkb_baseline(data.z, data.m, data.y, replicates, seed);
}

// Single-trial GLM: one HRF regressor per event plus an intercept.
inline Eigen::MatrixXd trial_design(const EventDesign& design, const Hrf& hrf, const TimeGrid& grid) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  const auto events = static_cast<Eigen::Index>(design.onsets.size());
  Eigen::MatrixXd x(n, events + 1);
  x.col(0).setOnes();
  for (Eigen::Index e = 0; e < events; ++e) {
    std::vector<double> amp(design.onsets.size(), 0.0);
    amp[static_cast<std::size_t>(e)] = 1.0;
    x.col(e + 1) = convolve_amplitudes(design.onsets, amp, hrf, grid);
  }
  return x;
}

// Per-trial amplitudes (intercept excluded) of `signal` under the design.
inline Eigen::VectorXd trial_betas(const EventDesign& design, const Hrf& hrf, const TimeGrid& grid,
                                   const Eigen::VectorXd& signal) {
  const Eigen::MatrixXd x = trial_design(design, hrf, grid);
  const auto fit = detail::ols(x, signal);
  if (!fit) {
    std::string which;
    for (std::size_t e = 0; e < design.onsets.size(); ++e) {
      Eigen::MatrixXd reduced(x.rows(), x.cols() - 1);
      reduced << x.leftCols(static_cast<Eigen::Index>(e) + 1), x.rightCols(x.cols() - static_cast<Eigen::Index>(e) - 2);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(reduced);
      qr.setThreshold(1e-10);
      if (qr.rank() == reduced.cols()) which += (which.empty() ? "" : ", ") + std::to_string(e);
    }
    throw SingularSystemError("single-trial design is rank deficient; overlapping trials: " +
                                  (which.empty() ? std::string("unresolved") : which),
                              std::numeric_limits<double>::infinity());
  }
  return fit->tail(fit->size() - 1);
}

// KKB on per-trial (condition, beta_M, beta_Y) triples with subjects as the
// multilevel unit.
inline BaselineResult beta_kkb_baseline(const SimDataset& data, const Hrf& hrf, std::size_t replicates,
                                        std::uint64_t seed) {
  const TimeGrid& grid = data.z.grid();
  std::vector<std::optional<detail::PathTriple>> triples;
  for (std::size_t i = 0; i < data.z.n_subjects(); ++i) {
    const EventDesign& d = data.designs.at(i);
    const Eigen::VectorXd bm = trial_betas(d, hrf, grid, data.m.subject(i));
    const Eigen::VectorXd by = trial_betas(d, hrf, grid, data.y.subject(i));
    Eigen::VectorXd cond(static_cast<Eigen::Index>(d.conditions.size()));
    for (std::size_t e = 0; e < d.conditions.size(); ++e) cond[static_cast<Eigen::Index>(e)] = d.conditions[e];
    triples.push_back(detail::path_triple(cond, bm, by));
  }
  return detail::kkb_from_triples(triples, replicates, seed);
}

}  // namespace fmed
