#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "region_gain/regions.hpp"
#include "region_gain/types.hpp"

namespace region_gain {

/// x' = f(x, z), z' = g(x, z); both halves read the stacked state y = (x, z).
struct InterconnectedSystem {
  Eigen::Index n = 1;
  Eigen::Index m = 1;
  VectorField f;
  VectorField g;

  Eigen::Index dim() const { return n + m; }
  VectorXd h(const VectorXd& y) const {
    VectorXd out(n + m);
    out << f(y), g(y);
    return out;
  }
  VectorField field() const {
    return [self = *this](const VectorXd& y) { return self.h(y); };
  }
};

enum class Method { rk4, rk45 };

struct IntegrateOptions {
  double T = 50.0;
  double dt = 1e-3;  // rk4 step; output spacing for rk45
  Method method = Method::rk4;
  std::size_t output_stride = 1;
  double rtol = 1e-8;
  double atol = 1e-10;
  double blowup = 1e9;
};

enum class TrajectoryStatus { ok, blow_up, step_underflow };

std::string to_string(TrajectoryStatus s);

struct Trajectory {
  std::vector<double> times;
  std::vector<VectorXd> states;
  std::vector<double> U_values;  // empty unless U was supplied
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  TrajectoryStatus status = TrajectoryStatus::ok;

  const VectorXd& final_state() const { return states.back(); }
};

/// Classical fourth-order step.
template <typename Scalar>
Vector<Scalar> rk4_step(const BasicVectorField<Scalar>& h, const Vector<Scalar>& y, Scalar dt) {
  const Vector<Scalar> k1 = h(y);
  const Vector<Scalar> k2 = h(y + Scalar(0.5) * dt * k1);
  const Vector<Scalar> k3 = h(y + Scalar(0.5) * dt * k2);
  const Vector<Scalar> k4 = h(y + dt * k3);
  return y + dt / Scalar(6) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
}

template <typename Scalar>
struct DopriStep {
  Vector<Scalar> y;    // fifth-order solution
  Vector<Scalar> err;  // difference to the embedded fourth-order one
  Vector<Scalar> f_end;
};

/// Dormand-Prince 5(4) step; f0 = h(y) is reused (first-same-as-last).
template <typename Scalar>
DopriStep<Scalar> dopri_step(const BasicVectorField<Scalar>& h, const Vector<Scalar>& y, const Vector<Scalar>& f0,
                             Scalar dt) {
  const Vector<Scalar> k2 = h(y + dt * (Scalar(1.0 / 5) * f0));
  const Vector<Scalar> k3 = h(y + dt * (Scalar(3.0 / 40) * f0 + Scalar(9.0 / 40) * k2));
  const Vector<Scalar> k4 = h(y + dt * (Scalar(44.0 / 45) * f0 - Scalar(56.0 / 15) * k2 + Scalar(32.0 / 9) * k3));
  const Vector<Scalar> k5 = h(y + dt * (Scalar(19372.0 / 6561) * f0 - Scalar(25360.0 / 2187) * k2 +
                                        Scalar(64448.0 / 6561) * k3 - Scalar(212.0 / 729) * k4));
  const Vector<Scalar> k6 = h(y + dt * (Scalar(9017.0 / 3168) * f0 - Scalar(355.0 / 33) * k2 +
                                        Scalar(46732.0 / 5247) * k3 + Scalar(49.0 / 176) * k4 -
                                        Scalar(5103.0 / 18656) * k5));
  Vector<Scalar> y5 = y + dt * (Scalar(35.0 / 384) * f0 + Scalar(500.0 / 1113) * k3 + Scalar(125.0 / 192) * k4 -
                                Scalar(2187.0 / 6784) * k5 + Scalar(11.0 / 84) * k6);
  Vector<Scalar> k7 = h(y5);
  Vector<Scalar> err = dt * (Scalar(71.0 / 57600) * f0 - Scalar(71.0 / 16695) * k3 + Scalar(71.0 / 1920) * k4 -
                             Scalar(17253.0 / 339200) * k5 + Scalar(22.0 / 525) * k6 - Scalar(1.0 / 40) * k7);
  return {std::move(y5), std::move(err), std::move(k7)};
}

/// Integrates y' = h(y) on [0, T]. rk4 takes fixed steps (the last one is
/// shortened to land on T) and records every output_stride-th state plus the
/// final one. rk45 records states on the grid k * dt * output_stride using
/// cubic Hermite interpolation between accepted steps.
Trajectory integrate(const VectorField& h, const VectorXd& y0, const IntegrateOptions& opts,
                     const ScalarField& U = {});

inline Trajectory integrate(const InterconnectedSystem& sys, const VectorXd& y0, const IntegrateOptions& opts,
                            const ScalarField& U = {}) {
  return integrate(sys.field(), y0, opts, U);
}

/// Integrates every initial condition independently, in parallel.
std::vector<Trajectory> integrate_ensemble(const VectorField& h, const std::vector<VectorXd>& inits,
                                           const IntegrateOptions& opts, const ScalarField& U = {});

struct AttractionReport {
  std::size_t n_init = 0;
  std::size_t passed = 0;
  std::size_t blow_ups = 0;
  std::size_t monotonicity_violations = 0;  // shell check only
  double tolerance = 0.0;
  double worst_terminal_excess = -kInf;  // max of U(Y(T)) - target
  std::vector<VectorXd> failures;        // initial conditions
  bool ok() const { return n_init > 0 && passed == n_init && monotonicity_violations == 0; }
};

/// Initial conditions sampled in {M_tilde <= U <= M_hat} (inside `box`).
/// Passes when U(Y(T)) <= M_tilde + 1e-3 (M_hat - M_tilde) and U does not
/// increase by more than 1e-6 between output states while in the shell.
AttractionReport verify_shell_attractivity(const InterconnectedSystem& sys, const ScalarField& U, double M_tilde,
                                           double M_hat, std::size_t n_init, const IntegrateOptions& opts,
                                           std::uint64_t seed, const Box& box);

/// Initial conditions uniform in init_box; passes when
/// U(Y(T)) <= M_tilde + 1e-3 max(1, M_tilde). Blow-ups count as failures.
AttractionReport verify_global_attraction(const InterconnectedSystem& sys, const ScalarField& U, double M_tilde,
                                          const Box& init_box, std::size_t n_init, const IntegrateOptions& opts,
                                          std::uint64_t seed);

struct RecurrenceReport {
  std::size_t n_init = 0;
  std::size_t recurrent = 0;
  std::size_t left_region = 0;  // trajectories that exit R before T
  std::vector<char> flags;      // per trajectory
  std::vector<VectorXd> recurrent_inits;
  double epsilon = 1e-3;
};

/// Flags trajectory k when, while still in R, a state comes within epsilon of
/// an earlier stretch of the same path that is more than 10 dt older.
bool is_recurrent(const Trajectory& tr, const Region& region, double epsilon, double min_separation,
                  bool* left_region = nullptr);

RecurrenceReport detect_recurrence(const InterconnectedSystem& sys, const Region& gap, std::size_t n_init,
                                   const IntegrateOptions& opts, std::uint64_t seed, double epsilon = 1e-3);

RecurrenceReport detect_recurrence(const InterconnectedSystem& sys, const Region& gap,
                                   const std::vector<VectorXd>& inits, const IntegrateOptions& opts,
                                   double epsilon = 1e-3);

/// Columns t, y1..yk and U when present.
void write_trajectory_csv(std::ostream& out, const Trajectory& tr);

}  // namespace region_gain
