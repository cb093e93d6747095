#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "region_gain/gains.hpp"
#include "region_gain/types.hpp"

namespace region_gain {

/// Storage function V : R^d -> R>=0 with an optional decrease rate lambda.
struct StorageFunction {
  Eigen::Index dimension = 1;
  ScalarField value;
  ScalarField lambda;

  double operator()(const VectorXd& v) const { return value(v); }
  bool has_lambda() const { return static_cast<bool>(lambda); }

  /// lambda(v) = eps * |v|, used when a spec omits the decrease rate.
  static ScalarField default_lambda(double eps = 1e-3) {
    return [eps](const VectorXd& v) { return eps * v.norm(); };
  }
};

/// Thresholds of one regime. Infinite bounds are +inf.
struct Thresholds {
  double M_lo = 0.0;
  double M_hi = kInf;
  double N_lo = 0.0;
  double N_hi = kInf;
  double M_tilde = 0.0;  // max{gamma^-1(M_lo), N_lo}
  double M_hat = kInf;   // min{delta(M_hi), N_hi}
  bool valid = false;    // M_tilde < M_hat
};

/// Throws std::invalid_argument when the ranges are not ordered and
/// InversionError when gamma^-1(M_lo) does not exist.
Thresholds compute_thresholds(const ScalarGain& gamma, const ScalarGain& delta, double M_lo, double M_hi,
                              double N_lo, double N_hi);

/// sigma(s) = (delta(s) + gamma^-1(s)) / 2 tabulated on [0, s_max]; the grid
/// step defaults to 1e-3 * s_max.
ScalarGain construct_sigma(const ScalarGain& gamma, const ScalarGain& delta, double s_max,
                           std::optional<double> grid_step = std::nullopt);

struct SigmaReport {
  bool ok = true;
  std::optional<double> first_violation;
  std::string violation_kind;  // "lower", "upper" or "derivative"
  double min_lower_gap = kInf;  // min sigma - delta
  double min_upper_gap = kInf;  // min gamma^-1 - sigma
  std::size_t samples = 0;
};

/// Samples delta(s) < sigma(s) < gamma^-1(s) and sigma' > 0 (forward
/// differences) on [a, b] with a > 0.
SigmaReport validate_sigma(const ScalarGain& sigma, const ScalarGain& gamma, const ScalarGain& delta, double a,
                           double b, double grid_step);

/// U(x, z) = max{sigma(V(x)), W(z)}.
class MergedLyapunov {
 public:
  MergedLyapunov(ScalarGain sigma, StorageFunction V, StorageFunction W);

  double operator()(const VectorXd& x, const VectorXd& z) const;
  /// y = (x, z) stacked.
  double operator()(const VectorXd& y) const;
  ScalarField as_field() const;

  const ScalarGain& sigma() const { return sigma_; }
  const StorageFunction& V() const { return V_; }
  const StorageFunction& W() const { return W_; }
  Eigen::Index n() const { return V_.dimension; }
  Eigen::Index m() const { return W_.dimension; }

  /// sigma'(s): table central difference, or a small central difference for
  /// closed-form sigmas.
  double sigma_slope(double s) const;

 private:
  ScalarGain sigma_;
  StorageFunction V_;
  StorageFunction W_;
};

double merged_U(const MergedLyapunov& m, const VectorXd& x, const VectorXd& z);

/// 1e-2 * 2^-k for k = 0..12.
std::vector<double> default_dini_taus();

template <typename Scalar>
struct BasicDiniEstimate {
  Scalar value;
  std::vector<Scalar> taus;
  std::vector<Scalar> quotients;
};
using DiniEstimate = BasicDiniEstimate<double>;

/// Finite surrogate of the upper Dini derivative of phi at y in the direction
/// field: the largest forward quotient over the smallest half of the taus
/// (taus strictly decreasing, all positive).
template <typename Scalar>
BasicDiniEstimate<Scalar> dini_derivative(const BasicScalarField<Scalar>& phi,
                                          const BasicVectorField<Scalar>& direction, const Vector<Scalar>& y,
                                          std::span<const Scalar> taus) {
  if (taus.empty()) throw std::invalid_argument("dini_derivative needs at least one tau");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > Scalar(0))) throw std::invalid_argument("dini taus must be positive");
    if (i > 0 && !(taus[i] < taus[i - 1])) throw std::invalid_argument("dini taus must be strictly decreasing");
  }
  const Scalar base = phi(y);
  const Vector<Scalar> dir = direction(y);
  BasicDiniEstimate<Scalar> est{Scalar(0), {taus.begin(), taus.end()}, {}};
  est.quotients.reserve(taus.size());
  for (const Scalar tau : taus) est.quotients.push_back((phi(y + tau * dir) - base) / tau);
  const std::size_t tail = std::max<std::size_t>(1, taus.size() / 2);
  est.value = *std::max_element(est.quotients.end() - static_cast<std::ptrdiff_t>(tail), est.quotients.end());
  return est;
}

inline DiniEstimate dini_derivative(const ScalarField& phi, const VectorField& direction, const VectorXd& y) {
  const auto taus = default_dini_taus();
  return dini_derivative<double>(phi, direction, y, taus);
}

/// E(x, z) = min{sigma'(V(x)) lambda_x(x), lambda_z(z)}.
double decrease_rate_E(const MergedLyapunov& m, const ScalarField& lambda_x, const ScalarField& lambda_z,
                       const VectorXd& x, const VectorXd& z);

enum class Subsystem { x, z };

struct IssImplicationReport {
  Subsystem subsystem = Subsystem::x;
  std::size_t n_samples = 0;
  std::size_t antecedent_count = 0;
  std::size_t violation_count = 0;
  double worst_margin = kInf;  // min over antecedent samples of -lambda - D+V
  double slack_rel = 1e-6;
  std::vector<VectorXd> violations;  // first few violating points

  double pass_rate() const {
    return antecedent_count == 0 ? 1.0
                                 : 1.0 - static_cast<double>(violation_count) / static_cast<double>(antecedent_count);
  }
  bool passed() const { return violation_count == 0; }
};

/// For Subsystem::x checks, on every sample y = (x, z) with
/// V(x) >= gain(W(z)), that D_f^+ V(x, z) <= -lambda_x(x) + slack; `field`
/// is the subsystem's own right-hand side (f for x, g for z) evaluated at
/// the full state. Subsystem::z swaps the roles.
IssImplicationReport verify_iss_implication(Subsystem which, const StorageFunction& own, const ScalarGain& gain,
                                            const StorageFunction& other, const VectorField& field,
                                            std::span<const VectorXd> samples, double slack_rel = 1e-6,
                                            std::size_t max_recorded = 32);

}  // namespace region_gain
