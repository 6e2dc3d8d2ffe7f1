#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fmed/error.hpp"

namespace fmed {

// Row-major so that each subject's curve is contiguous.
using CurveMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Uniform sampling grid t_k = k * dt, k = 0..n-1, on the domain [0, T) with
// T = n * dt. The last sample sits one step before T.
class TimeGrid {
 public:
  TimeGrid(long n_points, double dt) : n_(0), dt_(dt) {
    if (n_points < 3) {
      throw InvalidArgument("time grid needs at least 3 points, got " + std::to_string(n_points));
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) {
      throw InvalidArgument("time grid spacing must be positive and finite");
    }
    n_ = static_cast<std::size_t>(n_points);
  }

  std::size_t size() const { return n_; }
  double dt() const { return dt_; }
  // T = n * dt.
  double domain_length() const { return static_cast<double>(n_) * dt_; }
  double time(std::size_t k) const { return static_cast<double>(k) * dt_; }
  // Length covered by the samples, t_{n-1} - t_0.
  double span() const { return time(n_ - 1); }

  Eigen::VectorXd times() const {
    Eigen::VectorXd t(n_);
    for (std::size_t k = 0; k < n_; ++k) t[k] = time(k);
    return t;
  }

  bool operator==(const TimeGrid& other) const { return n_ == other.n_ && dt_ == other.dt_; }
  bool operator!=(const TimeGrid& other) const { return !(*this == other); }

 private:
  std::size_t n_;
  double dt_;
};

inline TimeGrid build_grid(long n_points, double dt) { return TimeGrid(n_points, dt); }

// N subject curves on a shared grid.
class FunctionalSample {
 public:
  FunctionalSample(TimeGrid grid, CurveMatrix values, bool centered = false,
                   std::vector<std::string> ids = {})
      : grid_(grid), values_(std::move(values)), centered_(centered), ids_(std::move(ids)) {
    if (values_.rows() < 1) throw ShapeError("functional sample needs at least one subject");
    if (static_cast<std::size_t>(values_.cols()) != grid_.size()) {
      throw ShapeError("functional sample has " + std::to_string(values_.cols()) +
                       " columns but the grid has " + std::to_string(grid_.size()) + " points");
    }
    if (!values_.allFinite()) throw InvalidArgument("functional sample contains non-finite values");
    if (ids_.empty()) {
      ids_.reserve(static_cast<std::size_t>(values_.rows()));
      for (Eigen::Index i = 0; i < values_.rows(); ++i) ids_.push_back(std::to_string(i + 1));
    } else if (ids_.size() != static_cast<std::size_t>(values_.rows())) {
      throw ShapeError("subject id count does not match the number of rows");
    }
    if (centered_) {
      const Eigen::RowVectorXd mean = values_.colwise().mean();
      const double scale = std::max(1.0, values_.cwiseAbs().maxCoeff());
      if (mean.cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw InvalidArgument("sample flagged as centered but column means are not zero");
      }
    }
  }

  const TimeGrid& grid() const { return grid_; }
  const CurveMatrix& values() const { return values_; }
  std::size_t n_subjects() const { return static_cast<std::size_t>(values_.rows()); }
  bool centered() const { return centered_; }
  const std::vector<std::string>& ids() const { return ids_; }

  Eigen::VectorXd subject(std::size_t i) const { return values_.row(static_cast<Eigen::Index>(i)).transpose(); }

  // Rows picked (with repetition) by index.
  FunctionalSample select(const std::vector<std::size_t>& rows) const {
    CurveMatrix out(static_cast<Eigen::Index>(rows.size()), values_.cols());
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.row(static_cast<Eigen::Index>(r)) = values_.row(static_cast<Eigen::Index>(rows[r]));
      ids.push_back(ids_.at(rows[r]));
    }
    return FunctionalSample(grid_, std::move(out), false, std::move(ids));
  }

 private:
  TimeGrid grid_;
  CurveMatrix values_;
  bool centered_;
  std::vector<std::string> ids_;
};

// Point-wise centering across subjects: one mean per time point is removed.
inline FunctionalSample center(const FunctionalSample& sample) {
  CurveMatrix values = sample.values();
  const Eigen::RowVectorXd mean = values.colwise().mean();
  values.rowwise() -= mean;
  return FunctionalSample(sample.grid(), std::move(values), true, sample.ids());
}

struct NamedSample {
  std::string_view name;
  const FunctionalSample& sample;
};

// Throws AlignmentError on grid mismatch and ShapeError on subject-count
// mismatch, naming the first offending pair.
inline void validate_aligned(std::initializer_list<NamedSample> samples) {
  if (samples.size() < 2) return;
  const NamedSample& ref = *samples.begin();
  for (auto it = samples.begin() + 1; it != samples.end(); ++it) {
    const auto& g0 = ref.sample.grid();
    const auto& g1 = it->sample.grid();
    if (g0 != g1) {
      throw AlignmentError(std::string(ref.name) + " and " + std::string(it->name) +
                           " are on different grids (" + std::to_string(g0.size()) + " points, dt " +
                           std::to_string(g0.dt()) + " vs " + std::to_string(g1.size()) +
                           " points, dt " + std::to_string(g1.dt()) + ")");
    }
    if (ref.sample.n_subjects() != it->sample.n_subjects()) {
      throw ShapeError(std::string(ref.name) + " has " + std::to_string(ref.sample.n_subjects()) +
                       " subjects but " + std::string(it->name) + " has " +
                       std::to_string(it->sample.n_subjects()));
    }
  }
}

}  // namespace fmed
