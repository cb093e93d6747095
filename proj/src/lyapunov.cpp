#include "region_gain/lyapunov.hpp"

#include "region_gain/parallel.hpp"

namespace region_gain {

Thresholds compute_thresholds(const ScalarGain& gamma, const ScalarGain& delta, double M_lo, double M_hi,
                              double N_lo, double N_hi) {
  if (!(M_lo >= 0.0) || !(M_lo < M_hi) || std::isinf(M_lo))
    throw std::invalid_argument("thresholds need 0 <= M_lo < M_hi");
  if (!(N_lo >= 0.0) || !(N_lo < N_hi) || std::isinf(N_lo))
    throw std::invalid_argument("thresholds need 0 <= N_lo < N_hi");

  Thresholds t;
  t.M_lo = M_lo;
  t.M_hi = M_hi;
  t.N_lo = N_lo;
  t.N_hi = N_hi;
  const double gamma_inv = M_lo == 0.0 ? 0.0 : invert(gamma, M_lo);
  t.M_tilde = std::max(gamma_inv, N_lo);
  const double delta_hi = std::isinf(M_hi) ? delta.value_at_infinity() : delta(M_hi);
  t.M_hat = std::min(delta_hi, N_hi);
  t.valid = t.M_tilde < t.M_hat;
  return t;
}

ScalarGain construct_sigma(const ScalarGain& gamma, const ScalarGain& delta, double s_max,
                           std::optional<double> grid_step) {
  if (!(s_max > 0.0) || std::isinf(s_max)) throw std::invalid_argument("sigma needs a finite s_max > 0");
  const double step = grid_step.value_or(1e-3 * s_max);
  if (!(step > 0.0)) throw std::invalid_argument("sigma grid step must be positive");
  const auto n = static_cast<std::size_t>(std::ceil(s_max / step - 1e-9));

  std::vector<double> values(n + 1, 0.0);
  double hint = gamma.domain_hint();
  double prev = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double s = step * static_cast<double>(i);
    // Successive preimages increase, so the previous one is a valid lower end.
    const double ginv = invert(gamma, s, prev, hint);
    prev = ginv;
    hint = std::max(hint, 2.0 * ginv);
    values[i] = 0.5 * (delta(s) + ginv);
  }
  return ScalarGain::from_table(PiecewiseLinearTable(step, std::move(values)), GainClass::Kinf);
}

SigmaReport validate_sigma(const ScalarGain& sigma, const ScalarGain& gamma, const ScalarGain& delta, double a,
                           double b, double grid_step) {
  if (!(a > 0.0) || !(b > a) || !(grid_step > 0.0))
    throw std::invalid_argument("validate_sigma needs 0 < a < b and grid_step > 0");
  SigmaReport r;
  const auto n = static_cast<std::size_t>(std::ceil((b - a) / grid_step - 1e-9));
  auto flag = [&r](double s, const char* kind) {
    if (r.ok) {
      r.ok = false;
      r.first_violation = s;
      r.violation_kind = kind;
    }
  };
  double prev = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double s = k == n ? b : a + grid_step * static_cast<double>(k);
    const double sig = sigma(s);
    const double lower = sig - delta(s);
    const double upper = invert(gamma, s) - sig;
    r.min_lower_gap = std::min(r.min_lower_gap, lower);
    r.min_upper_gap = std::min(r.min_upper_gap, upper);
    if (!(lower > 0.0)) flag(s, "lower");
    if (!(upper > 0.0)) flag(s, "upper");
    if (k > 0 && !(sig > prev)) flag(s, "derivative");
    prev = sig;
    ++r.samples;
  }
  return r;
}

// ---------------------------------------------------------------------------

MergedLyapunov::MergedLyapunov(ScalarGain sigma, StorageFunction V, StorageFunction W)
    : sigma_(std::move(sigma)), V_(std::move(V)), W_(std::move(W)) {
  if (!V_.value || !W_.value) throw std::invalid_argument("merged U needs both storage functions");
}

double MergedLyapunov::operator()(const VectorXd& x, const VectorXd& z) const {
  return std::max(sigma_(V_(x)), W_(z));
}

double MergedLyapunov::operator()(const VectorXd& y) const {
  if (y.size() != n() + m()) throw std::invalid_argument("state dimension does not match n + m");
  return (*this)(VectorXd(y.head(n())), VectorXd(y.tail(m())));
}

ScalarField MergedLyapunov::as_field() const {
  return [self = *this](const VectorXd& y) { return self(y); };
}

double MergedLyapunov::sigma_slope(double s) const {
  if (const auto* t = sigma_.table()) return t->derivative(s);
  const double h = 1e-6 * std::max(1.0, s);
  if (s < h) return (sigma_(s + h) - sigma_(s)) / h;
  return (sigma_(s + h) - sigma_(s - h)) / (2.0 * h);
}

double merged_U(const MergedLyapunov& m, const VectorXd& x, const VectorXd& z) { return m(x, z); }

std::vector<double> default_dini_taus() {
  std::vector<double> taus(13);
  for (int k = 0; k < 13; ++k) taus[static_cast<std::size_t>(k)] = std::ldexp(1e-2, -k);
  return taus;
}

double decrease_rate_E(const MergedLyapunov& m, const ScalarField& lambda_x, const ScalarField& lambda_z,
                       const VectorXd& x, const VectorXd& z) {
  if (!lambda_x || !lambda_z) throw std::invalid_argument("decrease rate needs both lambda_x and lambda_z");
  return std::min(m.sigma_slope(m.V()(x)) * lambda_x(x), lambda_z(z));
}

// ---------------------------------------------------------------------------

IssImplicationReport verify_iss_implication(Subsystem which, const StorageFunction& own, const ScalarGain& gain,
                                            const StorageFunction& other, const VectorField& field,
                                            std::span<const VectorXd> samples, double slack_rel,
                                            std::size_t max_recorded) {
  if (!own.has_lambda()) throw std::invalid_argument("ISS implication check needs a decrease rate");
  const Eigen::Index d_own = own.dimension;
  const Eigen::Index d_other = other.dimension;
  const bool is_x = which == Subsystem::x;

  // Own part sits at the front for x, at the back for z.
  auto own_part = [&](const VectorXd& y) { return VectorXd(is_x ? y.head(d_own) : y.tail(d_own)); };
  auto other_part = [&](const VectorXd& y) { return VectorXd(is_x ? y.tail(d_other) : y.head(d_other)); };
  const ScalarField phi = [&](const VectorXd& y) { return own(own_part(y)); };
  const VectorField direction = [&](const VectorXd& y) {
    VectorXd d = VectorXd::Zero(y.size());
    const VectorXd v = field(y);
    if (is_x)
      d.head(d_own) = v;
    else
      d.tail(d_own) = v;
    return d;
  };
  const auto taus = default_dini_taus();

  struct Partial {
    std::size_t antecedent = 0, violations = 0;
    double worst = kInf;
    std::vector<VectorXd> points;
  };
  const std::size_t chunks = worker_count();
  std::vector<Partial> parts(chunks);
  parallel_chunks(samples.size(), chunks, [&](std::size_t begin, std::size_t end, std::size_t c) {
    Partial& p = parts[c];
    for (std::size_t i = begin; i < end; ++i) {
      const VectorXd& y = samples[i];
      const VectorXd o = own_part(y);
      if (own(o) < gain(other(other_part(y)))) continue;
      ++p.antecedent;
      const double lam = own.lambda(o);
      const double dini = dini_derivative<double>(phi, direction, y, taus).value;
      const double margin = -lam - dini;
      p.worst = std::min(p.worst, margin);
      if (margin < -slack_rel * (1.0 + std::fabs(lam))) {
        ++p.violations;
        if (p.points.size() < max_recorded) p.points.push_back(y);
      }
    }
  });

  IssImplicationReport r;
  r.subsystem = which;
  r.n_samples = samples.size();
  r.slack_rel = slack_rel;
  for (auto& p : parts) {
    r.antecedent_count += p.antecedent;
    r.violation_count += p.violations;
    r.worst_margin = std::min(r.worst_margin, p.worst);
    for (auto& v : p.points)
      if (r.violations.size() < max_recorded) r.violations.push_back(std::move(v));
  }
  return r;
}

}  // namespace region_gain
