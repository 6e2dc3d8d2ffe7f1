#include <gtest/gtest.h>

#include <sstream>

#include "fmed/funcdata.hpp"
#include "fmed/io.hpp"

using namespace fmed;

TEST(TimeGrid, MatchesSimulationDesign) {
  const TimeGrid g = build_grid(150, 2.0);
  EXPECT_EQ(g.size(), 150u);
  EXPECT_DOUBLE_EQ(g.domain_length(), 300.0);
  EXPECT_DOUBLE_EQ(g.time(0), 0.0);
  EXPECT_DOUBLE_EQ(g.time(149), 298.0);
  EXPECT_EQ(g.time(74), 148.0);
}

TEST(TimeGrid, SmallestGrid) {
  const TimeGrid g = build_grid(3, 1.0);
  EXPECT_EQ(g.times(), Eigen::Vector3d(0.0, 1.0, 2.0));
  EXPECT_DOUBLE_EQ(g.domain_length(), 3.0);
}

TEST(TimeGrid, LastTimeIsExactMultiple) {
  for (double dt : {0.1, 0.3, 2.0, 0.7}) {
    const TimeGrid g = build_grid(77, dt);
    EXPECT_EQ(g.span(), dt * 76.0);
    EXPECT_LT(g.span(), g.domain_length());
  }
}

TEST(TimeGrid, RejectsBadInputs) {
  EXPECT_THROW(build_grid(2, 1.0), InvalidArgument);
  EXPECT_THROW(build_grid(0, 1.0), InvalidArgument);
  EXPECT_THROW(build_grid(10, 0.0), InvalidArgument);
  EXPECT_THROW(build_grid(10, -1.0), InvalidArgument);
}

TEST(FunctionalSample, RejectsNonFiniteAndWrongWidth) {
  const TimeGrid g(3, 1.0);
  CurveMatrix bad(1, 3);
  bad << 1.0, std::nan(""), 2.0;
  EXPECT_THROW(FunctionalSample(g, bad), InvalidArgument);
  EXPECT_THROW(FunctionalSample(g, CurveMatrix::Zero(2, 4)), ShapeError);
  EXPECT_THROW(FunctionalSample(g, CurveMatrix::Ones(2, 3), true), InvalidArgument);
}

TEST(Center, TwoSubjects) {
  CurveMatrix v(2, 3);
  v << 1, 1, 1, 3, 3, 3;
  const FunctionalSample s(TimeGrid(3, 1.0), v);
  const FunctionalSample c = center(s);
  CurveMatrix expected(2, 3);
  expected << -1, -1, -1, 1, 1, 1;
  EXPECT_EQ(c.values(), expected);
  EXPECT_TRUE(c.centered());
  EXPECT_EQ(s.values(), v);
  EXPECT_FALSE(s.centered());
}

TEST(Center, SingleSubjectBecomesZero) {
  CurveMatrix v(1, 4);
  v << 1, -2, 3, 5;
  EXPECT_EQ(center(FunctionalSample(TimeGrid(4, 1.0), v)).values(), CurveMatrix::Zero(1, 4));
}

TEST(Center, IdempotentWithZeroColumnSums) {
  const CurveMatrix v = CurveMatrix::Random(37, 20) * 50.0;
  const FunctionalSample once = center(FunctionalSample(TimeGrid(20, 0.5), v));
  const FunctionalSample twice = center(once);
  EXPECT_LE((once.values() - twice.values()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(once.values().colwise().sum().cwiseAbs().maxCoeff(), 1e-10 * 37);
}

TEST(ValidateAligned, AcceptsMatchingTriple) {
  const TimeGrid g(150, 2.0);
  const FunctionalSample z(g, CurveMatrix::Zero(50, 150));
  const FunctionalSample m(g, CurveMatrix::Zero(50, 150));
  const FunctionalSample y(g, CurveMatrix::Zero(50, 150));
  EXPECT_NO_THROW(validate_aligned({{"Z", z}, {"M", m}, {"Y", y}}));
}

TEST(ValidateAligned, GridMismatchNamesPair) {
  const FunctionalSample z(TimeGrid(150, 2.0), CurveMatrix::Zero(50, 150));
  const FunctionalSample m(TimeGrid(149, 2.0), CurveMatrix::Zero(50, 149));
  try {
    validate_aligned({{"Z", z}, {"M", m}});
    FAIL() << "expected AlignmentError";
  } catch (const AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("Z and M"), std::string::npos);
  }
}

TEST(ValidateAligned, SubjectCountMismatchIsShapeError) {
  const TimeGrid g(150, 2.0);
  const FunctionalSample z(g, CurveMatrix::Zero(50, 150));
  const FunctionalSample y(g, CurveMatrix::Zero(49, 150));
  EXPECT_THROW(validate_aligned({{"Z", z}, {"Y", y}}), ShapeError);
}

TEST(WideCsv, RoundTripIsExact) {
  const CurveMatrix v = CurveMatrix::Random(4, 6) * 1e3;
  const FunctionalSample s(TimeGrid(6, 0.1), v, false, {"a", "b", "c", "d"});
  std::stringstream buf;
  write_wide_csv(buf, s);
  const FunctionalSample back = parse_wide_csv(buf, "mem");
  EXPECT_EQ(back.values(), v);
  EXPECT_EQ(back.ids(), s.ids());
  EXPECT_EQ(back.grid(), s.grid());
}

TEST(WideCsv, RejectsNonUniformTimes) {
  std::istringstream in("subject_id,0,1,2.5\ns1,1,2,3\n");
  EXPECT_THROW(parse_wide_csv(in, "mem"), FormatError);
}

TEST(WideCsv, RejectsRaggedRows) {
  std::istringstream in("subject_id,0,1,2\ns1,1,2\n");
  EXPECT_THROW(parse_wide_csv(in, "mem"), FormatError);
}

TEST(WideCsv, MissingFileIsIoError) { EXPECT_THROW(read_wide_csv("/nonexistent/z.csv"), IoError); }
