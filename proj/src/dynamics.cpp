#include "region_gain/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_map>

#include "region_gain/parallel.hpp"

namespace region_gain {

std::string to_string(TrajectoryStatus s) {
  switch (s) {
    case TrajectoryStatus::ok: return "ok";
    case TrajectoryStatus::blow_up: return "blow_up";
    case TrajectoryStatus::step_underflow: return "step_underflow";
  }
  return "?";
}

namespace {

bool blown_up(const VectorXd& y, double bound) { return !y.allFinite() || y.norm() > bound; }

void push_state(Trajectory& tr, double t, const VectorXd& y, const ScalarField& U) {
  tr.times.push_back(t);
  tr.states.push_back(y);
  if (U) tr.U_values.push_back(U(y));
}

Trajectory integrate_rk4(const VectorField& h, const VectorXd& y0, const IntegrateOptions& o, const ScalarField& U) {
  Trajectory tr;
  push_state(tr, 0.0, y0, U);
  const auto steps = static_cast<std::size_t>(std::ceil(o.T / o.dt - 1e-9));
  VectorXd y = y0;
  double t = 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const bool last = k == steps;
    const double step = last ? o.T - t : o.dt;
    VectorXd next = rk4_step<double>(h, y, step);
    ++tr.accepted;
    if (blown_up(next, o.blowup)) {
      tr.status = TrajectoryStatus::blow_up;
      if (tr.times.back() != t) push_state(tr, t, y, U);
      return tr;
    }
    y = std::move(next);
    t = last ? o.T : o.dt * static_cast<double>(k);
    if (last || k % o.output_stride == 0) push_state(tr, t, y, U);
  }
  return tr;
}

Trajectory integrate_rk45(const VectorField& h, const VectorXd& y0, const IntegrateOptions& o, const ScalarField& U) {
  Trajectory tr;
  push_state(tr, 0.0, y0, U);
  const double out_dt = o.dt * static_cast<double>(o.output_stride);
  std::size_t next_out = 1;
  bool out_done = false;
  auto out_time = [&](std::size_t j) { return std::min(o.T, out_dt * static_cast<double>(j)); };

  VectorXd y = y0;
  VectorXd f = h(y);
  double t = 0.0;
  double step = std::min(o.dt, o.T);
  while (t < o.T) {
    step = std::min(step, o.T - t);
    if (step < 1e-14 * std::max(1.0, t)) {
      tr.status = TrajectoryStatus::step_underflow;
      if (tr.times.back() != t) push_state(tr, t, y, U);
      return tr;
    }
    auto s = dopri_step<double>(h, y, f, step);
    double err = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double scale = o.atol + o.rtol * std::max(std::fabs(y[i]), std::fabs(s.y[i]));
      err += (s.err[i] / scale) * (s.err[i] / scale);
    }
    err = std::sqrt(err / static_cast<double>(y.size()));
    if (!std::isfinite(err)) err = 1e10;

    if (err <= 1.0) {
      ++tr.accepted;
      const double t1 = o.T - (t + step) <= 1e-12 * o.T ? o.T : t + step;
      if (blown_up(s.y, o.blowup)) {
        tr.status = TrajectoryStatus::blow_up;
        if (tr.times.back() != t) push_state(tr, t, y, U);
        return tr;
      }
      // Dense output on [t, t1] by cubic Hermite interpolation.
      while (!out_done && out_time(next_out) <= t1 + 1e-12 * std::max(1.0, t1)) {
        const double tau = out_time(next_out);
        VectorXd yi;
        if (std::fabs(tau - t1) <= 1e-12 * std::max(1.0, t1)) {
          yi = s.y;
        } else {
          const double th = (tau - t) / (t1 - t);
          const double th2 = th * th, th3 = th2 * th;
          yi = (2 * th3 - 3 * th2 + 1) * y + (th3 - 2 * th2 + th) * (t1 - t) * f + (-2 * th3 + 3 * th2) * s.y +
               (th3 - th2) * (t1 - t) * s.f_end;
        }
        push_state(tr, tau, yi, U);
        if (tau >= o.T) out_done = true;
        ++next_out;
      }
      y = std::move(s.y);
      f = std::move(s.f_end);
      t = t1;
      step *= std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
    } else {
      ++tr.rejected;
      step *= std::max(0.2, 0.9 * std::pow(err, -0.2));
    }
  }
  if (tr.times.back() < o.T) push_state(tr, o.T, y, U);
  return tr;
}

}  // namespace

Trajectory integrate(const VectorField& h, const VectorXd& y0, const IntegrateOptions& opts, const ScalarField& U) {
  if (!(opts.T > 0.0)) throw std::invalid_argument("integration horizon must be positive");
  if (!(opts.dt > 0.0)) throw std::invalid_argument("integration step must be positive");
  if (opts.output_stride == 0) throw std::invalid_argument("output stride must be at least 1");
  if (!y0.allFinite()) throw std::invalid_argument("initial state is not finite");
  return opts.method == Method::rk4 ? integrate_rk4(h, y0, opts, U) : integrate_rk45(h, y0, opts, U);
}

std::vector<Trajectory> integrate_ensemble(const VectorField& h, const std::vector<VectorXd>& inits,
                                           const IntegrateOptions& opts, const ScalarField& U) {
  std::vector<Trajectory> out(inits.size());
  parallel_chunks(inits.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) out[i] = integrate(h, inits[i], opts, U);
  });
  return out;
}

// ---------------------------------------------------------------------------

AttractionReport verify_shell_attractivity(const InterconnectedSystem& sys, const ScalarField& U, double M_tilde,
                                           double M_hat, std::size_t n_init, const IntegrateOptions& opts,
                                           std::uint64_t seed, const Box& box) {
  if (!(M_tilde < M_hat)) throw std::invalid_argument("shell needs M_tilde < M_hat");
  AttractionReport r;
  r.tolerance = 1e-3 * (M_hat - M_tilde);
  const auto inits = sample(Region::shell(U, M_tilde, M_hat, box), n_init, seed);
  const auto trajs = integrate_ensemble(sys.field(), inits, opts, U);
  r.n_init = inits.size();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    bool ok = tr.status == TrajectoryStatus::ok;
    if (tr.status == TrajectoryStatus::blow_up) ++r.blow_ups;
    const double excess = tr.U_values.back() - M_tilde;
    r.worst_terminal_excess = std::max(r.worst_terminal_excess, excess);
    if (excess > r.tolerance) ok = false;
    for (std::size_t k = 0; k + 1 < tr.U_values.size(); ++k) {
      if (tr.U_values[k] < M_tilde) break;
      if (tr.U_values[k + 1] > tr.U_values[k] + 1e-6) {
        ++r.monotonicity_violations;
        ok = false;
        break;
      }
    }
    if (ok)
      ++r.passed;
    else if (r.failures.size() < 32)
      r.failures.push_back(inits[i]);
  }
  return r;
}

AttractionReport verify_global_attraction(const InterconnectedSystem& sys, const ScalarField& U, double M_tilde,
                                          const Box& init_box, std::size_t n_init, const IntegrateOptions& opts,
                                          std::uint64_t seed) {
  AttractionReport r;
  r.tolerance = 1e-3 * std::max(1.0, M_tilde);
  const auto inits = sample(Region::box(init_box), n_init, seed);
  const auto trajs = integrate_ensemble(sys.field(), inits, opts, U);
  r.n_init = inits.size();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& tr = trajs[i];
    bool ok = tr.status == TrajectoryStatus::ok;
    if (tr.status == TrajectoryStatus::blow_up) ++r.blow_ups;
    const double excess = tr.U_values.back() - M_tilde;
    r.worst_terminal_excess = std::max(r.worst_terminal_excess, excess);
    if (excess > r.tolerance) ok = false;
    if (ok)
      ++r.passed;
    else if (r.failures.size() < 32)
      r.failures.push_back(inits[i]);
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

double point_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

struct CellKey {
  std::int64_t x, y;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    return std::hash<std::int64_t>()(k.x * 73856093LL ^ k.y * 19349663LL);
  }
};

}  // namespace

bool is_recurrent(const Trajectory& tr, const Region& region, double epsilon, double min_separation,
                  bool* left_region) {
  if (left_region) *left_region = false;
  if (tr.states.empty()) return false;
  if (tr.states.front().size() != 2) throw std::invalid_argument("recurrence detection is planar only");
  const double cell = std::max(16.0 * epsilon, 1e-2);
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
  auto key = [cell](double x, double y) {
    return CellKey{static_cast<std::int64_t>(std::floor(x / cell)), static_cast<std::int64_t>(std::floor(y / cell))};
  };
  auto pt = [&](std::size_t i) { return Eigen::Vector2d(tr.states[i][0], tr.states[i][1]); };

  for (std::size_t k = 0; k < tr.states.size(); ++k) {
    if (!region.contains(tr.states[k])) {
      if (left_region) *left_region = true;
      return false;
    }
    const Eigen::Vector2d p = pt(k);
    const auto c = key(p.x(), p.y());
    if (auto it = grid.find(c); it != grid.end())
      for (const std::size_t s : it->second)
        if (tr.times[s + 1] < tr.times[k] - min_separation && point_segment_distance(p, pt(s), pt(s + 1)) <= epsilon)
          return true;
    if (k == 0) continue;
    // Register segment (k-1, k) in every cell its epsilon-padded box touches.
    const Eigen::Vector2d a = pt(k - 1);
    const auto lo = key(std::min(a.x(), p.x()) - epsilon, std::min(a.y(), p.y()) - epsilon);
    const auto hi = key(std::max(a.x(), p.x()) + epsilon, std::max(a.y(), p.y()) + epsilon);
    for (std::int64_t ix = lo.x; ix <= hi.x; ++ix)
      for (std::int64_t iy = lo.y; iy <= hi.y; ++iy) grid[{ix, iy}].push_back(k - 1);
  }
  return false;
}

RecurrenceReport detect_recurrence(const InterconnectedSystem& sys, const Region& gap,
                                   const std::vector<VectorXd>& inits, const IntegrateOptions& opts,
                                   double epsilon) {
  if (sys.dim() != 2) throw std::invalid_argument("recurrence detection is planar only");
  RecurrenceReport r;
  r.epsilon = epsilon;
  r.n_init = inits.size();
  r.flags.assign(inits.size(), 0);
  std::vector<char> left(inits.size(), 0);
  const VectorField h = sys.field();
  parallel_chunks(inits.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const Trajectory tr = integrate(h, inits[i], opts);
      bool exited = false;
      r.flags[i] = is_recurrent(tr, gap, epsilon, 10.0 * opts.dt, &exited) ? 1 : 0;
      left[i] = exited ? 1 : 0;
    }
  });
  for (std::size_t i = 0; i < inits.size(); ++i) {
    if (r.flags[i]) {
      ++r.recurrent;
      r.recurrent_inits.push_back(inits[i]);
    }
    if (left[i]) ++r.left_region;
  }
  return r;
}

RecurrenceReport detect_recurrence(const InterconnectedSystem& sys, const Region& gap, std::size_t n_init,
                                   const IntegrateOptions& opts, std::uint64_t seed, double epsilon) {
  return detect_recurrence(sys, gap, sample(gap, n_init, seed), opts, epsilon);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& tr) {
  const Eigen::Index k = tr.states.empty() ? 0 : tr.states.front().size();
  out << 't';
  for (Eigen::Index i = 1; i <= k; ++i) out << ",y" << i;
  if (!tr.U_values.empty()) out << ",U";
  out << '\n';
  out.precision(12);
  for (std::size_t j = 0; j < tr.states.size(); ++j) {
    out << tr.times[j];
    for (Eigen::Index i = 0; i < k; ++i) out << ',' << tr.states[j][i];
    if (!tr.U_values.empty()) out << ',' << tr.U_values[j];
    out << '\n';
  }
}

}  // namespace region_gain
