#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fmed/regression.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace fmed;
using namespace fmed::testing;

namespace {

std::vector<CovariateTermSpec> specs_of(const std::vector<Term>& terms) {
  std::vector<CovariateTermSpec> out;
  for (const auto& t : terms) out.push_back(t.spec);
  return out;
}

std::shared_ptr<const DesignCache> cache_of(const std::vector<Term>& terms, const FunctionalSample& y) {
  std::vector<const FunctionalSample*> xs;
  for (const auto& t : terms) xs.push_back(t.x);
  return DesignCache::create(xs, specs_of(terms), y);
}

// Penalized integrated squared error evaluated by predict + trapezoid.
double objective(const FittedRegression& model, const LinearSystem& sys, const std::vector<const FunctionalSample*>& xs,
                 const FunctionalSample& y) {
  const FunctionalSample pred = predict(model, xs);
  double total = 0.0;
  for (std::size_t i = 0; i < y.n_subjects(); ++i) {
    const Eigen::VectorXd r = pred.subject(i) - y.subject(i);
    total += integrate(r.cwiseAbs2(), y.grid());
  }
  return total + model.coefficients.dot(sys.penalty() * model.coefficients);
}

}  // namespace

TEST(AssembleSystem, DimensionBookkeeping) {
  const TimeGrid g(20, 1.0);
  const FunctionalSample x1 = smooth_sample(g, 6, 1);
  const FunctionalSample x2 = smooth_sample(g, 6, 2);
  const FunctionalSample y = smooth_sample(g, 6, 3);
  const double T = g.domain_length();
  const LinearSystem sys = assemble_system(
      {{x1, CovariateTermSpec::concurrent("a", BasisSystem::fourier(5, T), LinDiffOp::curvature(), 0.1)},
       {x2, CovariateTermSpec::historical("b", Window{4.0}, BasisSystem::bspline(3, T, 3), BasisSystem::bspline(3, T, 3),
                                          LinDiffOp::curvature(), 0.1, 0.2)}},
      y);
  EXPECT_EQ(sys.dim(), 14u);
  EXPECT_EQ(sys.a.rows(), 14);
  EXPECT_EQ(sys.a, sys.a.transpose());
  const Eigen::MatrixXd m = sys.a + sys.penalty();
  EXPECT_EQ(m, m.transpose());
}

TEST(AssembleSystem, ConstantBasisIsScalarOls) {
  const TimeGrid g(30, 0.5);
  const FunctionalSample x = smooth_sample(g, 4, 5);
  const FunctionalSample y = smooth_sample(g, 4, 6);
  const LinearSystem sys = assemble_system(
      {{x, CovariateTermSpec::concurrent("x", BasisSystem::monomial(1, g.domain_length()), LinDiffOp::curvature(), 0.0)}}, y);
  double a = 0.0;
  double b = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    a += integrate(x.subject(i).cwiseAbs2(), g);
    b += integrate(x.subject(i).cwiseProduct(y.subject(i)), g);
  }
  EXPECT_NEAR(sys.a(0, 0), a, 1e-12 * a);
  EXPECT_NEAR(sys.b[0], b, 1e-12 * std::abs(b));
  EXPECT_NEAR(fit(sys).coefficients[0], b / a, 1e-12 * std::abs(b / a));
}

TEST(AssembleSystem, WholeHistoryOfOnesIsTime) {
  const TimeGrid g(25, 0.4);
  const FunctionalSample ones(g, CurveMatrix::Ones(3, 25));
  const BasisSystem flat = BasisSystem::monomial(1, g.domain_length());
  const auto cache = DesignCache::create(
      {&ones}, {CovariateTermSpec::historical("x", Window::infinite(), flat, flat, LinDiffOp::curvature(), 0, 0)}, ones);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LE((cache->rows(i).col(0) - g.times()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AssembleSystem, Errors) {
  const FunctionalSample a(TimeGrid(10, 1.0), CurveMatrix::Ones(2, 10));
  const FunctionalSample b(TimeGrid(11, 1.0), CurveMatrix::Ones(2, 11));
  const auto spec = CovariateTermSpec::concurrent("a", BasisSystem::fourier(3, 10.0), LinDiffOp::curvature(), 0);
  EXPECT_THROW(assemble_system({{b, spec}}, a), AlignmentError);
  EXPECT_THROW(assemble_system({}, a), InvalidArgument);
  EXPECT_THROW(CovariateTermSpec::concurrent("a", BasisSystem::fourier(3, 10.0), LinDiffOp::curvature(), -1.0),
               InvalidArgument);
}

// Random small mixed instances against the dense oracle.
TEST(Fit, MatchesBruteForceNormalEquations) {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 20; ++rep) {
    const TimeGrid g(12, 1.0 / 12.0);
    const double T = g.domain_length();
    const FunctionalSample x1 = noise_sample(g, 5, 1.0, rng());
    const FunctionalSample x2 = noise_sample(g, 5, 1.0, rng());
    const FunctionalSample y = noise_sample(g, 5, 1.0, rng());
    std::vector<Term> terms;
    terms.push_back({&x1, CovariateTermSpec::concurrent("c", random_basis(rng, T, false), LinDiffOp::curvature(), 0.0)});
    const double delta = std::vector<double>{4.0 / 12.0, 6.0 / 12.0, 9.0 / 12.0, std::numeric_limits<double>::infinity()}[rng() % 4];
    terms.push_back({&x2, CovariateTermSpec::historical("h", Window{delta}, random_basis(rng, T, true), random_basis(rng, T, false),
                                                        LinDiffOp::curvature(), 0.0, 0.0)});
    if (rep % 2 == 1) std::swap(terms[0], terms[1]);
    const Eigen::VectorXd expected = brute_force_solve(terms, y);
    const FittedRegression f = fit(cache_of(terms, y)->system());
    EXPECT_FALSE(f.diagnostics.jitter_applied) << "instance " << rep;
    EXPECT_LE(rel_diff(f.coefficients, expected), 1e-8) << "instance " << rep << " " << terms[0].spec.dim() << "/" << terms[1].spec.dim() << " d=" << delta;
  }
}

TEST(Fit, RecoversBasisSpanCoefficients) {
  const TimeGrid g(60, 0.5);
  const double T = g.domain_length();
  const BasisSystem basis = BasisSystem::fourier(5, T);
  const FunctionalSample x = smooth_sample(g, 8, 7);
  Eigen::VectorXd truth(5);
  truth << 0.5, -1.0, 0.3, 0.7, -0.2;
  const Eigen::VectorXd theta = basis.eval_matrix(g.times()) * truth;
  CurveMatrix yv = x.values();
  for (Eigen::Index i = 0; i < yv.rows(); ++i) yv.row(i) = yv.row(i).cwiseProduct(theta.transpose());
  const FunctionalSample y(g, yv);
  const FittedRegression f = fit(assemble_system({{x, CovariateTermSpec::concurrent("x", basis, LinDiffOp::curvature(), 0)}}, y));
  const Eigen::VectorXd est = sample_on_grid(f.terms[0].estimate, g).curve;
  EXPECT_LE(integrate((est - theta).cwiseAbs2(), g), 1e-8);
  EXPECT_LE(f.diagnostics.training_mspe, 1e-10);
  EXPECT_LE(mspe(predict(f, {&x}), y), 1e-10);
}

TEST(Fit, HugePenaltyKillsNonConstantFourierTerms) {
  const TimeGrid g(24, 1.0 / 24.0);
  const BasisSystem basis = BasisSystem::fourier(5, g.domain_length());
  const FunctionalSample x = smooth_sample(g, 6, 8);
  const FunctionalSample y = smooth_sample(g, 6, 9);
  const auto cache = DesignCache::create({&x}, {CovariateTermSpec::concurrent("x", basis, LinDiffOp::curvature(), 0)}, y);
  const Eigen::VectorXd free = fit(cache->system()).coefficients;
  const Eigen::VectorXd shrunk =
      fit(cache->system(), {CovariateTermSpec::concurrent("x", basis, LinDiffOp::curvature(), 1e12)}).coefficients;
  for (Eigen::Index k = 1; k < 5; ++k) EXPECT_LE(std::abs(shrunk[k]), 1e-6 * std::abs(free[k])) << k;
}

TEST(Fit, ZeroDesignIsSingular) {
  const TimeGrid g(20, 1.0);
  const FunctionalSample zero(g, CurveMatrix::Zero(4, 20));
  const FunctionalSample y = smooth_sample(g, 4, 1);
  const auto spec = CovariateTermSpec::concurrent("m", BasisSystem::fourier(3, 20.0), LinDiffOp::curvature(), 1.0);
  EXPECT_THROW(fit(assemble_system({{zero, spec}}, y)), SingularSystemError);
}

TEST(Fit, CollinearTermsUseRecordedJitter) {
  const TimeGrid g(30, 1.0);
  const FunctionalSample x = smooth_sample(g, 5, 4);
  const FunctionalSample y = smooth_sample(g, 5, 5);
  const auto spec = CovariateTermSpec::concurrent("x", BasisSystem::fourier(3, 30.0), LinDiffOp::curvature(), 0.0);
  const FittedRegression f = fit(assemble_system({{x, spec}, {x, spec}}, y));
  EXPECT_TRUE(f.diagnostics.jitter_applied);
  EXPECT_GT(f.diagnostics.jitter, 0.0);
  EXPECT_TRUE(f.coefficients.allFinite());
}

TEST(Fit, LocalMinimumOfPenalizedObjective) {
  const TimeGrid g(40, 1.0);
  const double T = g.domain_length();
  const FunctionalSample z = smooth_sample(g, 10, 21);
  const FunctionalSample m = smooth_sample(g, 10, 22);
  const FunctionalSample y = plus(smooth_sample(g, 10, 23), noise_sample(g, 10, 0.3, 24));
  const std::vector<Term> terms{
      {&z, CovariateTermSpec::concurrent("z", BasisSystem::fourier(5, T), LinDiffOp::harmonic(), 0.5)},
      {&m, CovariateTermSpec::historical("m", Window{5.0}, BasisSystem::bspline(5, T), BasisSystem::fourier(3, T),
                                         LinDiffOp::curvature(), 2.0, 0.7)}};
  const LinearSystem sys = cache_of(terms, y)->system();
  const FittedRegression f = fit(sys);
  const double best = objective(f, sys, {&z, &m}, y);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    FittedRegression moved = f;
    Eigen::VectorXd dir(f.coefficients.size());
    for (auto& v : dir) v = n01(rng);
    moved.coefficients += 1e-3 * dir.normalized();
    EXPECT_GE(objective(moved, sys, {&z, &m}, y), best);
  }
}

TEST(Fit, RoughnessNonIncreasingInLambda) {
  const TimeGrid g(50, 2.0);
  const double T = g.domain_length();
  const FunctionalSample x = smooth_sample(g, 12, 31);
  const FunctionalSample y = plus(smooth_sample(g, 12, 32), noise_sample(g, 12, 1.0, 33));
  const std::vector<CovariateTermSpec> bases{
      CovariateTermSpec::concurrent("c", BasisSystem::bspline(12, T), LinDiffOp::curvature(), 0),
      CovariateTermSpec::concurrent("f", BasisSystem::fourier(9, T), LinDiffOp::harmonic(), 0),
      CovariateTermSpec::historical("h", Window{10.0}, BasisSystem::bspline(6, T), BasisSystem::bspline(6, T),
                                    LinDiffOp::curvature(), 0, 0)};
  for (const auto& base : bases) {
    const auto cache = DesignCache::create({&x}, {base}, y);
    double previous = std::numeric_limits<double>::infinity();
    for (double lambda : {1e-4, 1e-2, 1.0, 1e2, 1e4}) {
      CovariateTermSpec spec = base;
      spec.set_smoothing(lambda);
      const double r = roughness(fit(cache->system(), {spec}).terms[0]);
      EXPECT_LE(r, previous * (1 + 1e-10)) << base.name << " lambda " << lambda;
      previous = r;
    }
  }
}

TEST(Fit, PermutationEquivariant) {
  const TimeGrid g(40, 1.0);
  const double T = g.domain_length();
  const FunctionalSample z = plus(smooth_sample(g, 9, 41), noise_sample(g, 9, 1.0, 45));
  const FunctionalSample m = plus(smooth_sample(g, 9, 42), noise_sample(g, 9, 1.0, 46));
  const FunctionalSample y = plus(smooth_sample(g, 9, 43), noise_sample(g, 9, 0.5, 44));
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  const FunctionalSample zp = z.select(perm);
  const FunctionalSample mp = m.select(perm);
  const FunctionalSample yp = y.select(perm);
  const auto specs = [&] {
    return std::vector<CovariateTermSpec>{
        CovariateTermSpec::concurrent("z", BasisSystem::fourier(5, T), LinDiffOp::curvature(), 1e-2),
        CovariateTermSpec::historical("m", Window{6.0}, BasisSystem::fourier(3, T), BasisSystem::fourier(3, T),
                                      LinDiffOp::curvature(), 1e-2, 1e-2)};
  };
  const FittedRegression fa = fit(DesignCache::create({&z, &m}, specs(), y)->system());
  const Eigen::VectorXd& a = fa.coefficients;
  const Eigen::VectorXd b = fit(DesignCache::create({&zp, &mp}, specs(), yp)->system()).coefficients;
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()))
      << "condition " << fa.diagnostics.condition_estimate;
}

TEST(Fit, ConcurrentIsNearlyNarrowHistorical) {
  const TimeGrid g(150, 2.0);
  const double T = g.domain_length();
  const FunctionalSample x = smooth_sample(g, 20, 51);
  const BasisSystem bt = BasisSystem::fourier(5, T);
  const Eigen::VectorXd theta = (0.2 * g.times().array()).sin().matrix() * 0.0 +
                                (2 * M_PI * g.times().array() / T).cos().matrix();
  CurveMatrix yv = x.values();
  for (Eigen::Index i = 0; i < yv.rows(); ++i) yv.row(i) = yv.row(i).cwiseProduct(theta.transpose());
  const FunctionalSample y = plus(FunctionalSample(g, yv), noise_sample(g, 20, 0.5, 52));
  const FittedRegression conc =
      fit(assemble_system({{x, CovariateTermSpec::concurrent("x", bt, LinDiffOp::curvature(), 1e-3)}}, y));
  const FittedRegression hist = fit(assemble_system(
      {{x, CovariateTermSpec::historical("x", Window{g.dt()}, BasisSystem::monomial(1, T), bt, LinDiffOp::curvature(),
                                         0.0, 1e-3)}},
      y));
  const double a = mspe(predict(conc, {&x}), y);
  const double b = mspe(predict(hist, {&x}), y);
  EXPECT_LE(std::abs(a - b), 0.1 * a);
}

TEST(Predict, ZeroCovariatesGiveZero) {
  const TimeGrid g(30, 1.0);
  const FunctionalSample x = smooth_sample(g, 5, 61);
  const FunctionalSample y = smooth_sample(g, 5, 62);
  const auto spec = CovariateTermSpec::historical("x", Window{4.0}, BasisSystem::fourier(3, 30.0),
                                                  BasisSystem::fourier(3, 30.0), LinDiffOp::curvature(), 0.1, 0.1);
  const FittedRegression f = fit(assemble_system({{x, spec}}, y));
  const FunctionalSample zero(g, CurveMatrix::Zero(3, 30));
  EXPECT_EQ(predict(f, {&zero}).values(), CurveMatrix::Zero(3, 30));
}

TEST(Predict, HistoricalMatchesDoubleLoop) {
  const TimeGrid g(35, 2.0);
  const double T = g.domain_length();
  const FunctionalSample x = smooth_sample(g, 4, 71);
  const FunctionalSample y = smooth_sample(g, 4, 72);
  const auto spec = CovariateTermSpec::historical("x", Window{9.0}, BasisSystem::bspline(6, T), BasisSystem::fourier(5, T),
                                                  LinDiffOp::curvature(), 0.3, 0.2);
  const FittedRegression f = fit(assemble_system({{x, spec}}, y));
  const FunctionalSample pred = predict(f, {&x});
  const auto& surface = std::get<SurfaceEstimate>(f.terms[0].estimate);
  const std::size_t steps = 5;  // 9 s snaps to 10 s on a 2 s grid
  EXPECT_DOUBLE_EQ(surface.window.delta, 10.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < g.size(); ++k) {
      const std::size_t lo = k > steps ? k - steps : 0;
      double s = 0.0;
      for (std::size_t j = lo; j <= k; ++j) {
        const double theta = eval_coefficient(f.terms[0].estimate, g.time(j), g.time(k)).value;
        s += trap_weight(j, lo, k, g.dt()) * x.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * theta;
      }
      EXPECT_NEAR(pred.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)), s, 1e-10 * (1.0 + std::abs(s)));
    }
  }
  EXPECT_FALSE(f.diagnostics.warnings.empty());
}

TEST(EvalCoefficient, UnitCurveOnFourier) {
  const CurveEstimate c{BasisSystem::fourier(5, 1.0), Eigen::VectorXd::Unit(5, 0)};
  for (double t : {0.0, 0.3, 1.0}) EXPECT_NEAR(eval_coefficient(c, t).value, 1.0, 1e-15);
}

TEST(EvalCoefficient, RankOneSurfaceFactorizes) {
  const BasisSystem bs = BasisSystem::bspline(6, 10.0);
  const BasisSystem bt = BasisSystem::fourier(5, 10.0);
  const Eigen::VectorXd g1 = Eigen::VectorXd::Random(6);
  const Eigen::VectorXd g2 = Eigen::VectorXd::Random(5);
  const SurfaceEstimate s{bs, bt, g1 * g2.transpose(), Window::infinite()};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int rep = 0; rep < 10; ++rep) {
    const double a = u(rng);
    const double b = u(rng);
    EXPECT_NEAR(eval_coefficient(s, a, b).value, bs.eval(a).dot(g1) * bt.eval(b).dot(g2), 1e-12);
  }
}

TEST(EvalCoefficient, ExtrapolationFlag) {
  const BasisSystem b = BasisSystem::fourier(3, 300.0);
  const SurfaceEstimate s{b, b, Eigen::MatrixXd::Ones(3, 3), Window{6.0}};
  EXPECT_TRUE(eval_coefficient(s, 0.0, 100.0).extrapolated);
  EXPECT_FALSE(eval_coefficient(s, 96.0, 100.0).extrapolated);
  EXPECT_TRUE(eval_coefficient(s, 101.0, 100.0).extrapolated);
  EXPECT_THROW(eval_coefficient(s, 0.0, 400.0), DomainError);
}
