#pragma once

#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace region_gain {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Eigen::VectorXd;

/// Scalar field on R^k, e.g. a storage function or the merged U.
template <typename Scalar>
using BasicScalarField = std::function<Scalar(const Vector<Scalar>&)>;
/// Vector field R^k -> R^j.
template <typename Scalar>
using BasicVectorField = std::function<Vector<Scalar>(const Vector<Scalar>&)>;

using ScalarField = BasicScalarField<double>;
using VectorField = BasicVectorField<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Axis-aligned box used for sampling and contour grids.
struct Box {
  VectorXd lo;
  VectorXd hi;

  Eigen::Index dim() const { return lo.size(); }

  static Box cube(Eigen::Index dim, double half_width) {
    return {VectorXd::Constant(dim, -half_width), VectorXd::Constant(dim, half_width)};
  }

  bool contains(const VectorXd& y) const {
    return (y.array() >= lo.array()).all() && (y.array() <= hi.array()).all();
  }

  bool finite() const { return lo.allFinite() && hi.allFinite(); }
};

/// Raised when a numerical evaluation fails (non-finite value, failed
/// bracket, ...). The CLI maps it to exit code 3.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace region_gain
