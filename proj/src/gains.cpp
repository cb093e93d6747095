#include "region_gain/gains.hpp"

#include <algorithm>
#include <cmath>

namespace region_gain {

std::string to_string(GainClass c) {
  switch (c) {
    case GainClass::K: return "K";
    case GainClass::Kinf: return "Kinf";
    case GainClass::PositiveDefinite: return "positive-definite";
  }
  return "?";
}

// ---------------------------------------------------------------------------

PiecewiseLinearTable::PiecewiseLinearTable(double step, std::vector<double> values)
    : step_(step), values_(std::move(values)) {
  if (!(step_ > 0.0)) throw std::invalid_argument("table step must be positive");
  if (values_.size() < 2) throw std::invalid_argument("table needs at least two nodes");
}

double PiecewiseLinearTable::operator()(double s) const {
  if (s <= 0.0) return values_.front();
  const double u = s / step_;
  const std::size_t last = values_.size() - 1;
  // Extrapolate on the final segment; compare before the cast so huge s stays defined.
  const std::size_t i = u >= static_cast<double>(last) ? last - 1 : static_cast<std::size_t>(u);
  const double t = u - static_cast<double>(i);
  return values_[i] + t * (values_[i + 1] - values_[i]);
}

double PiecewiseLinearTable::derivative(double s) const {
  if (s < step_) return ((*this)(s + step_) - (*this)(s)) / step_;
  return ((*this)(s + step_) - (*this)(s - step_)) / (2.0 * step_);
}

// ---------------------------------------------------------------------------

ScalarGain::ScalarGain(Evaluator f, GainClass cls, double domain_hint, std::optional<double> saturation)
    : eval_(std::make_shared<const Evaluator>(std::move(f))),
      class_(cls),
      domain_hint_(domain_hint),
      saturation_(saturation) {
  if (!(domain_hint_ > 0.0)) throw std::invalid_argument("gain domain hint must be positive");
}

ScalarGain ScalarGain::from_table(PiecewiseLinearTable table, GainClass cls, std::optional<double> saturation) {
  auto shared = std::make_shared<const PiecewiseLinearTable>(std::move(table));
  ScalarGain g([shared](double s) { return (*shared)(s); }, cls, shared->s_max(), saturation);
  g.table_ = shared;
  return g;
}

ScalarGain ScalarGain::linear(double slope, double domain_hint) {
  return ScalarGain([slope](double s) { return slope * s; }, GainClass::Kinf, domain_hint);
}

double ScalarGain::operator()(double s) const {
  if (s < 0.0) {
    if (s < -1e-12) throw EvaluationError("gain evaluated at negative argument " + std::to_string(s));
    s = 0.0;
  }
  const double v = (*eval_)(s);
  if (!std::isfinite(v)) throw EvaluationError("gain evaluated to a non-finite value at s=" + std::to_string(s));
  return v;
}

double ScalarGain::value_at_infinity() const {
  if (saturation_) return *saturation_;
  return kInf;
}

// ---------------------------------------------------------------------------

ScalarGain running_max_envelope(const std::function<double(double)>& base, double s_max, double grid_step,
                                double factor) {
  if (!(grid_step > 0.0) || !(s_max > 0.0)) throw std::invalid_argument("envelope needs s_max > 0 and grid_step > 0");
  const auto n = static_cast<std::size_t>(std::ceil(s_max / grid_step - 1e-9));
  std::vector<double> values(n + 1);
  double running = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double s = grid_step * static_cast<double>(i);
    const double b = base(s);
    if (!std::isfinite(b)) throw EvaluationError("envelope base is non-finite at s=" + std::to_string(s));
    running = std::max(running, factor * std::fabs(b));
    values[i] = running;
  }

  std::optional<double> saturation;
  GainClass cls = GainClass::Kinf;
  const std::size_t tail = n - n / 5;
  const double top = values.back();
  if (top > 0.0 && std::all_of(values.begin() + static_cast<std::ptrdiff_t>(tail), values.end(),
                               [top](double v) { return v == top; })) {
    saturation = top;
    cls = GainClass::K;
  }
  return ScalarGain::from_table(PiecewiseLinearTable(grid_step, std::move(values)), cls, saturation);
}

ScalarGain compose(const ScalarGain& outer, const ScalarGain& inner) {
  GainClass cls = GainClass::Kinf;
  if (outer.claimed_class() == GainClass::PositiveDefinite || inner.claimed_class() == GainClass::PositiveDefinite)
    cls = GainClass::PositiveDefinite;
  else if (outer.claimed_class() == GainClass::K || inner.claimed_class() == GainClass::K)
    cls = GainClass::K;

  std::optional<double> saturation;
  if (inner.saturation())
    saturation = outer(*inner.saturation());
  else if (outer.saturation())
    saturation = outer.saturation();

  return ScalarGain([outer, inner](double s) { return outer(inner(s)); }, cls, inner.domain_hint(), saturation);
}

// ---------------------------------------------------------------------------

double invert(const ScalarGain& g, double y, double lo, double hi) {
  if (!std::isfinite(y) || y < 0.0) throw InversionError(InversionError::Kind::bracket, "cannot invert at y=" + std::to_string(y));
  const double tol = 1e-10 * std::max(1.0, y);
  if (y <= tol && std::fabs(g(0.0) - y) <= tol) return 0.0;

  if (const auto sat = g.saturation(); sat && y > *sat + tol)
    throw InversionError(InversionError::Kind::bracket,
                         "value " + std::to_string(y) + " exceeds the saturation level " + std::to_string(*sat));
  lo = std::max(lo, 0.0);
  if (g(lo) > y) lo = 0.0;
  if (!(hi > lo)) hi = lo + 1.0;
  const double hi0 = hi;
  int doublings = 0;
  while (g(hi) < y - 0.5 * tol) {
    if (++doublings > 60)
      throw InversionError(InversionError::Kind::bracket,
                           "value " + std::to_string(y) + " is outside the attainable range (bracket up to 2^60*" +
                               std::to_string(hi0) + ")");
    lo = hi;
    hi *= 2.0;
  }

  // Coarse monotonicity probe inside the final bracket.
  constexpr int kProbes = 64;
  double prev = g(lo);
  for (int i = 1; i <= kProbes; ++i) {
    const double s = lo + (hi - lo) * i / kProbes;
    const double v = g(s);
    if (v < prev - 1e-12 * std::max(1.0, std::fabs(prev)))
      throw InversionError(InversionError::Kind::non_monotone,
                           "gain decreases near s=" + std::to_string(s) + " inside the inversion bracket");
    prev = v;
  }

  const double target = y - 0.5 * tol;
  for (int it = 0; it < 400 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) >= target)
      hi = mid;
    else
      lo = mid;
  }
  if (std::fabs(g(hi) - y) <= tol) return hi;
  if (std::fabs(g(lo) - y) <= tol) return lo;
  throw InversionError(InversionError::Kind::tolerance,
                       "gain jumps across y=" + std::to_string(y) + " near s=" + std::to_string(hi));
}

double invert(const ScalarGain& g, double y) { return invert(g, y, 0.0, g.domain_hint()); }

// ---------------------------------------------------------------------------

namespace {

SgcVerdict sgc_verdict(const ScalarGain& gamma, const ScalarGain& delta, double s) {
  return gamma(delta(s)) < s - 1e-12 * std::max(1.0, s) ? SgcVerdict::holds : SgcVerdict::fails;
}

}  // namespace

std::vector<SgcInterval> scan_small_gain(const ScalarGain& gamma, const ScalarGain& delta, double a, double b,
                                         double grid_step) {
  if (!(a >= 0.0) || !(b > a)) throw std::invalid_argument("scan needs 0 <= a < b");
  if (!(grid_step > 0.0)) throw std::invalid_argument("scan needs grid_step > 0");

  const auto n = static_cast<std::size_t>(std::ceil((b - a) / grid_step - 1e-9));
  auto node = [&](std::size_t k) { return k == n ? b : a + grid_step * static_cast<double>(k); };

  std::vector<SgcInterval> out;
  std::size_t k0 = a == 0.0 ? 1 : 0;
  double prev_s = node(k0);
  SgcVerdict current = sgc_verdict(gamma, delta, prev_s);
  double run_lo = a;

  for (std::size_t k = k0 + 1; k <= n; ++k) {
    const double s = node(k);
    const SgcVerdict v = sgc_verdict(gamma, delta, s);
    if (v != current) {
      double lo = prev_s, hi = s;
      while (hi - lo > 1e-8) {
        const double mid = 0.5 * (lo + hi);
        if (sgc_verdict(gamma, delta, mid) == current)
          lo = mid;
        else
          hi = mid;
      }
      out.push_back({run_lo, lo, run_lo == 0.0, current});
      run_lo = hi;
      current = v;
    }
    prev_s = s;
  }
  out.push_back({run_lo, b, run_lo == 0.0, current});
  return out;
}

BilimitRatios bilimit_ratios(const ScalarGain& gamma, const ScalarGain& delta, double s_small, double s_large) {
  if (!(s_small > 0.0) || !(s_large > s_small)) throw std::invalid_argument("bilimit probes need 0 < s_small < s_large");
  BilimitRatios r{};
  r.worst_small = -kInf;
  r.worst_large = -kInf;
  for (int k = 0; k < 9; ++k) {
    const double ss = std::ldexp(s_small, -k);
    const double sl = std::ldexp(s_large, k);
    r.small_probes[k] = ss;
    r.large_probes[k] = sl;
    r.small_ratios[k] = gamma(delta(ss)) / ss;
    r.large_ratios[k] = gamma(delta(sl)) / sl;
    r.worst_small = std::max(r.worst_small, r.small_ratios[k]);
    r.worst_large = std::max(r.worst_large, r.large_ratios[k]);
  }
  return r;
}

ComposedSup sup_composed(const ScalarGain& gamma, const ScalarGain& delta, double a, double b, double grid_step) {
  const auto n = static_cast<std::size_t>(std::ceil((b - a) / grid_step - 1e-9));
  ComposedSup best{-kInf, a};
  for (std::size_t k = 0; k <= n; ++k) {
    const double s = k == n ? b : a + grid_step * static_cast<double>(k);
    const double v = gamma(delta(s));
    if (v > best.sup) best = {v, s};
  }
  return best;
}

GainCheck check_gain(const ScalarGain& g, double s_max, std::size_t samples) {
  GainCheck c{};
  c.zero_at_origin = std::fabs(g(0.0)) <= 1e-12;
  c.monotone = true;
  c.first_decrease_at = std::numeric_limits<double>::quiet_NaN();
  double prev = g(0.0);
  for (std::size_t i = 1; i < samples; ++i) {
    const double s = s_max * static_cast<double>(i) / static_cast<double>(samples - 1);
    const double v = g(s);
    if (v < prev - 1e-12 * std::max(1.0, std::fabs(prev))) {
      c.monotone = false;
      c.first_decrease_at = s;
      break;
    }
    prev = v;
  }
  c.unbounded = g(s_max) > g(0.5 * s_max);
  return c;
}

}  // namespace region_gain
