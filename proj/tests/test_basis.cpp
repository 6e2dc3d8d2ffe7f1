#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fmed/basis.hpp"

using namespace fmed;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<BasisSystem> sample_bases() {
  return {BasisSystem::fourier(7, 1.0), BasisSystem::fourier(5, 300.0), BasisSystem::monomial(5, 2.0),
          BasisSystem::bspline(9, 1.0, 6), BasisSystem::bspline(12, 300.0, 6)};
}

bool near_knot(const BasisSystem& b, double t, double gap) {
  for (double k : b.knots()) {
    if (std::abs(t - k) < gap) return true;
  }
  return false;
}

}  // namespace

TEST(EvalBasis, FourierAtZero) {
  const Eigen::VectorXd v = eval_basis(BasisSystem::fourier(3, 1.0), 0.0);
  EXPECT_NEAR(v[0], 1.0, 1e-15);
  EXPECT_NEAR(v[1], 0.0, 1e-15);
  EXPECT_NEAR(v[2], std::sqrt(2.0), 1e-15);
}

TEST(EvalBasis, Monomial) {
  EXPECT_EQ(eval_basis(BasisSystem::monomial(3, 5.0), 2.0), Eigen::Vector3d(1.0, 2.0, 4.0));
}

TEST(EvalBasis, BsplinePartitionOfUnity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 7.0);
  for (int order : {2, 3, 4, 6}) {
    const BasisSystem b = BasisSystem::bspline(order + 6, 7.0, order);
    for (int rep = 0; rep < 50; ++rep) EXPECT_NEAR(b.eval(u(rng)).sum(), 1.0, 1e-12);
    EXPECT_NEAR(b.eval(0.0).sum(), 1.0, 1e-12);
    EXPECT_NEAR(b.eval(7.0).sum(), 1.0, 1e-12);
  }
}

TEST(EvalBasis, OutsideDomain) {
  const BasisSystem b = BasisSystem::fourier(3, 1.0);
  EXPECT_THROW(b.eval(-0.1), DomainError);
  EXPECT_THROW(b.eval(1.5), DomainError);
}

TEST(EvalBasis, Construction) {
  EXPECT_THROW(BasisSystem::fourier(4, 1.0), InvalidArgument);
  EXPECT_THROW(BasisSystem::bspline(3, 1.0, 4), InvalidArgument);
  EXPECT_THROW(BasisSystem::monomial(2, 0.0), InvalidArgument);
}

TEST(EvalOperator, CurvatureOnMonomial) {
  const BasisSystem b = BasisSystem::monomial(3, 4.0);
  for (double t : {0.0, 1.3, 4.0}) EXPECT_EQ(eval_operator(LinDiffOp::curvature(), b, t), Eigen::Vector3d(0, 0, 2));
}

TEST(EvalOperator, CurvatureOnFourierSine) {
  const BasisSystem b = BasisSystem::fourier(3, 1.0);
  const double t = 1.0 / 8.0;
  const double w = 2.0 * kPi;
  const double expected = -w * w * std::sqrt(2.0) * std::sin(w * t);
  EXPECT_NEAR(eval_operator(LinDiffOp::curvature(), b, t)[1], expected, 1e-12 * std::abs(expected));
}

TEST(EvalOperator, HarmonicKernel) {
  for (double period : {1.0, 300.0}) {
    const BasisSystem b = BasisSystem::fourier(3, period);
    for (int k = 0; k <= 40; ++k) {
      const double t = period * k / 40.0;
      EXPECT_LE(eval_operator(LinDiffOp::harmonic(), b, t).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(EvalOperator, HarmonicNeedsHighOrderSplines) {
  EXPECT_THROW(eval_operator(LinDiffOp::harmonic(), BasisSystem::bspline(8, 1.0, 4), 0.5), CapabilityError);
  EXPECT_THROW(penalty_matrix(BasisSystem::bspline(8, 1.0, 2), LinDiffOp::curvature()), CapabilityError);
  EXPECT_NO_THROW(eval_operator(LinDiffOp::harmonic(), BasisSystem::bspline(8, 1.0, 5), 0.5));
}

TEST(EvalOperator, AgreesWithFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (const auto& b : sample_bases()) {
    const double T = b.domain_end();
    const double h = 1e-4 * T;
    std::uniform_real_distribution<double> u(0.05 * T, 0.95 * T);
    for (const LinDiffOp& op : {LinDiffOp::curvature(), LinDiffOp::harmonic()}) {
      const double w = op.angular_frequency(b);
      int checked = 0;
      while (checked < 20) {
        const double t = u(rng);
        if (b.kind() == BasisKind::bspline && near_knot(b, t, 3.0 * h)) continue;
        ++checked;
        const Eigen::VectorXd m2 = b.eval(t - 2 * h);
        const Eigen::VectorXd m1 = b.eval(t - h);
        const Eigen::VectorXd p1 = b.eval(t + h);
        const Eigen::VectorXd p2 = b.eval(t + 2 * h);
        const Eigen::VectorXd d1 = (p1 - m1) / (2 * h);
        const Eigen::VectorXd d2 = (p1 - 2 * b.eval(t) + m1) / (h * h);
        const Eigen::VectorXd d3 = (p2 - 2 * p1 + 2 * m1 - m2) / (2 * h * h * h);
        const Eigen::VectorXd fd = op.kind == OperatorKind::curvature ? d2 : Eigen::VectorXd(w * w * d1 + d3);
        const Eigen::VectorXd exact = eval_operator(op, b, t);
        const double scale = std::max(1.0, exact.cwiseAbs().maxCoeff());
        EXPECT_LE((fd - exact).cwiseAbs().maxCoeff(), 1e-4 * scale) << to_string(b.kind()) << " t=" << t;
      }
    }
  }
}

TEST(PenaltyMatrix, FourierCurvatureDiagonal) {
  const Eigen::MatrixXd p = penalty_matrix(BasisSystem::fourier(3, 1.0), LinDiffOp::curvature());
  const double w4 = std::pow(2.0 * kPi, 4);
  Eigen::Matrix3d expected = Eigen::Matrix3d::Zero();
  expected(1, 1) = expected(2, 2) = w4;
  EXPECT_LE((p - expected).cwiseAbs().maxCoeff(), 1e-6 * w4);
}

TEST(PenaltyMatrix, FourierCurvatureDiagonalHigherOrder) {
  const BasisSystem b = BasisSystem::fourier(11, 300.0);
  const Eigen::MatrixXd p = penalty_matrix(b, LinDiffOp::curvature());
  const double w = 2.0 * kPi / 300.0;
  const Eigen::MatrixXd off = p - Eigen::MatrixXd(p.diagonal().asDiagonal());
  EXPECT_LE(off.cwiseAbs().maxCoeff(), 1e-6 * p.cwiseAbs().maxCoeff());
  for (int r = 1; r <= 5; ++r) {
    const double expected = std::pow(r * w, 4);
    EXPECT_NEAR(p(2 * r - 1, 2 * r - 1), expected, 1e-6 * expected);
    EXPECT_NEAR(p(2 * r, 2 * r), expected, 1e-6 * expected);
  }
}

TEST(PenaltyMatrix, MonomialLinearHasNoCurvature) {
  EXPECT_EQ(penalty_matrix(BasisSystem::monomial(2, 1.0), LinDiffOp::curvature()), Eigen::Matrix2d::Zero());
}

TEST(PenaltyMatrix, SymmetricPositiveSemidefinite) {
  for (const auto& b : sample_bases()) {
    for (const LinDiffOp& op : {LinDiffOp::curvature(), LinDiffOp::harmonic()}) {
      const Eigen::MatrixXd p = penalty_matrix(b, op);
      EXPECT_EQ(p, p.transpose());
      const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p / scale);
      EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    }
  }
}

TEST(GramMatrix, FourierIsIdentity) {
  for (double period : {1.0, 300.0}) {
    const Eigen::MatrixXd g = gram_matrix(BasisSystem::fourier(11, period));
    EXPECT_LE((g - Eigen::MatrixXd::Identity(11, 11)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GramMatrix, MonomialClosedForm) {
  const Eigen::MatrixXd g = gram_matrix(BasisSystem::monomial(2, 1.0));
  Eigen::Matrix2d expected;
  expected << 1.0, 0.5, 0.5, 1.0 / 3.0;
  EXPECT_LE((g - expected).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(GramMatrix, ExactlySymmetric) {
  for (const auto& b : sample_bases()) {
    const Eigen::MatrixXd g = gram_matrix(b);
    EXPECT_EQ(g, g.transpose());
  }
}

TEST(GramMatrix, RefineBelowFourRejected) {
  EXPECT_THROW(gram_matrix(BasisSystem::fourier(3, 1.0), 3), InvalidArgument);
}
