#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "region_gain/types.hpp"

namespace region_gain {

enum class GainClass { K, Kinf, PositiveDefinite };

std::string to_string(GainClass c);

/// Uniform-grid piecewise-linear function on [0, (n-1)*step]. Beyond the last
/// node it extrapolates linearly from the last two nodes; below zero it is
/// clamped to the value at zero.
class PiecewiseLinearTable {
 public:
  PiecewiseLinearTable(double step, std::vector<double> values);

  double operator()(double s) const;
  /// Central difference with the table's own step (one-sided at s < step).
  double derivative(double s) const;

  double step() const { return step_; }
  double s_max() const { return step_ * static_cast<double>(values_.size() - 1); }
  const std::vector<double>& values() const { return values_; }

 private:
  double step_;
  std::vector<double> values_;
};

/// A nonnegative scalar function of a nonnegative scalar with the class
/// metadata the small-gain machinery needs. Immutable and cheap to copy.
class ScalarGain {
 public:
  using Evaluator = std::function<double(double)>;

  ScalarGain(Evaluator f, GainClass cls, double domain_hint, std::optional<double> saturation = std::nullopt);

  static ScalarGain from_table(PiecewiseLinearTable table, GainClass cls,
                               std::optional<double> saturation = std::nullopt);
  /// s -> slope * s, class K-infinity.
  static ScalarGain linear(double slope, double domain_hint = 100.0);

  /// Throws EvaluationError on a non-finite value or a negative argument.
  double operator()(double s) const;

  GainClass claimed_class() const { return class_; }
  double domain_hint() const { return domain_hint_; }
  std::optional<double> saturation() const { return saturation_; }
  /// lim_{s->inf}: the saturation value for class K gains, +inf otherwise.
  double value_at_infinity() const;
  /// Backing table, when the gain was built as one.
  const PiecewiseLinearTable* table() const { return table_.get(); }

 private:
  std::shared_ptr<const Evaluator> eval_;
  std::shared_ptr<const PiecewiseLinearTable> table_;
  GainClass class_;
  double domain_hint_;
  std::optional<double> saturation_;
};

/// s -> factor * max{|base(r)| : 0 <= r <= s}, tabulated on a uniform grid of
/// [0, s_max]. A constant tail covering the last 20% of the table is recorded
/// as a saturation (class K); otherwise the gain is claimed K-infinity.
ScalarGain running_max_envelope(const std::function<double(double)>& base, double s_max, double grid_step,
                                double factor = 1.0);

ScalarGain compose(const ScalarGain& outer, const ScalarGain& inner);

class InversionError : public EvaluationError {
 public:
  enum class Kind { bracket, non_monotone, tolerance };
  InversionError(Kind kind, const std::string& what) : EvaluationError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Bisection for s with |g(s) - y| <= 1e-10 * max(1, y). The upper end of the
/// bracket doubles up to 2^60 times before a bracket failure is reported. On
/// a plateau the leftmost preimage is returned.
double invert(const ScalarGain& g, double y, double lo, double hi);
double invert(const ScalarGain& g, double y);

enum class SgcVerdict { holds, fails };

struct SgcInterval {
  double lo;
  double hi;
  bool lo_open;  // true when lo == 0, which the condition excludes
  SgcVerdict verdict;
};

/// Partitions [a, b] into maximal runs where gamma(delta(s)) < s holds or
/// fails on the sample grid. Regime changes are refined by bisection to a
/// bracket of width 1e-8; ties within 1e-12 count as failures.
std::vector<SgcInterval> scan_small_gain(const ScalarGain& gamma, const ScalarGain& delta, double a, double b,
                                         double grid_step);

struct BilimitRatios {
  std::array<double, 9> small_probes;  // s_small * 2^-k
  std::array<double, 9> small_ratios;
  std::array<double, 9> large_probes;  // s_large * 2^k
  std::array<double, 9> large_ratios;
  double worst_small;
  double worst_large;
};

BilimitRatios bilimit_ratios(const ScalarGain& gamma, const ScalarGain& delta, double s_small, double s_large);

struct ComposedSup {
  double sup;
  double argsup;
};

/// Dense-grid maximum of gamma(delta(s)) over [a, b].
ComposedSup sup_composed(const ScalarGain& gamma, const ScalarGain& delta, double a, double b, double grid_step);

struct GainCheck {
  bool zero_at_origin;
  bool monotone;
  bool unbounded;  // only meaningful for K-infinity claims
  double first_decrease_at;  // NaN when monotone
};

/// Sampled check of the class invariants on [0, s_max].
GainCheck check_gain(const ScalarGain& g, double s_max, std::size_t samples = 2001);

}  // namespace region_gain
