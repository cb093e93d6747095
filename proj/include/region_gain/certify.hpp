#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "region_gain/dynamics.hpp"
#include "region_gain/lyapunov.hpp"
#include "region_gain/regions.hpp"
#include "region_gain/system_spec.hpp"

namespace region_gain {

enum class Verdict { certified, refuted, inconclusive };

std::string to_string(Verdict v);

/// Implication-type checks already carry their slack: any violation refutes.
Verdict classify_violations(std::size_t violations);
/// Strict hypotheses value > tol: refuted at or below tol, inconclusive up to
/// 10 tol, certified above.
Verdict classify_strict(double worst_value, double tol);
/// certified only if all are; refuted if any is.
Verdict combine(std::initializer_list<Verdict> vs);
Verdict combine(const std::vector<Verdict>& vs);

/// Sampled evidence for one hypothesis.
struct CheckReport {
  std::string name;
  Verdict verdict = Verdict::inconclusive;
  std::size_t n_samples = 0;
  double worst_margin = kInf;
  std::vector<VectorXd> violations;
  nlohmann::json tolerances = nlohmann::json::object();
  std::uint64_t seed = 0;
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
};

nlohmann::json point_json(const VectorXd& y);

/// Central-difference divergence with one step for every axis.
template <typename Scalar>
Scalar divergence(const BasicVectorField<Scalar>& field, const Vector<Scalar>& y, Scalar step) {
  Scalar sum(0);
  Vector<Scalar> p = y;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    p[i] = y[i] + step;
    const Scalar up = field(p)[i];
    p[i] = y[i] - step;
    sum += (up - field(p)[i]) / (Scalar(2) * step);
    p[i] = y[i];
  }
  return sum;
}

/// Step 1e-5 (1 + |y|).
inline double divergence(const VectorField& field, const VectorXd& y) {
  return divergence<double>(field, y, 1e-5 * (1.0 + y.norm()));
}

/// rho = 1 / (V + W); +inf at the origin.
ScalarField default_density(const StorageFunction& V, const StorageFunction& W);

/// div(h rho) > 1e-8 on samples of the gap region. An empty gap is reported
/// as certified with the note "gap empty, GAS by inclusion". Also reports
/// the product-rule residual |div(h rho) - rho div h - grad rho . h| on up to
/// 100 samples.
CheckReport check_density_condition(const VectorField& h, const ScalarField& rho, const Region& gap, std::size_t n_samples,
                           std::uint64_t seed);

/// (div h)(V + W) >= gamma(W) + delta(V) on the samples.
CheckReport check_dissipation_condition(const VectorField& h, const StorageFunction& V, const StorageFunction& W,
                                      const ScalarGain& gamma, const ScalarGain& delta,
                                      const std::vector<VectorXd>& samples);

/// Planar: |div h| >= 1e-6 with one sign, and |h| >= 1e-8, on gap samples.
/// Newton refinement from the samples with the smallest |h| locates
/// equilibria inside the region.
CheckReport check_bendixson_condition(const VectorField& h, const Region& gap, std::size_t n_samples, std::uint64_t seed);

/// Zeros of the field in the box: damped Newton from every node of a
/// grid x grid lattice (finite-difference Jacobian), deduplicated at 1e-6.
std::vector<VectorXd> locate_equilibria(const VectorField& h, const Box& box, int grid = 48);

/// Newton refinement of a single start; nullopt when it does not converge.
std::optional<VectorXd> newton_refine(const VectorField& h, const VectorXd& start, int max_iter = 60);

/// Trapezoidal flux of a planar field through a closed polyline: each
/// segment contributes the mean of h at its ends dotted with the segment's
/// outward normal times its length.
double boundary_flux(const VectorField& field, const Polyline& curve);

/// Largest vertex value of h . n.
double max_normal_component(const VectorField& field, const Polyline& curve);

/// Midpoint-rule integral of div h over the polygon (cells x cells grid of
/// its bounding box).
double enclosed_divergence_integral(const VectorField& field, const Polyline& curve, int cells = 256);

bool polygon_contains(const Polyline& curve, const Eigen::Vector2d& p);

enum class Mode { local, global, almost_global, planar };

std::string to_string(Mode m);
std::optional<Mode> parse_mode(const std::string& s);

/// Thrown when a mode cannot run on a spec (missing thresholds, wrong
/// dimension). The CLI maps it to exit 4.
class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RegimeCertificate {
  std::string regime;  // "local" or "global"
  Thresholds thresholds;
  std::optional<MergedLyapunov> merged;
  std::vector<CheckReport> checks;
  Verdict verdict = Verdict::inconclusive;
  nlohmann::json to_json() const;
};

struct CertifyOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_samples;
  bool auto_thresholds = false;
  std::string polyline_dir;  // where traced curves are written (planar mode), empty: skip
};

struct CertificationResult {
  Mode mode = Mode::local;
  std::string spec_name;
  std::vector<RegimeCertificate> regimes;
  std::vector<CheckReport> region_checks;
  Verdict verdict = Verdict::inconclusive;
  std::string conclusion;
  nlohmann::json extra = nlohmann::json::object();
  nlohmann::json to_json() const;
};

/// Thresholds from the spec, or the --auto search: the largest M_hi with the
/// small-gain condition on (0, M_hi] and the smallest M_lo with it on
/// [M_lo, s_max].
ThresholdInput regime_thresholds(const SystemSpec& spec, bool local, bool auto_search);

RegimeCertificate certify_regime(const SystemSpec& spec, bool local, const CertifyOptions& opts);

CertificationResult certify(const SystemSpec& spec, Mode mode, const CertifyOptions& opts = {});

}  // namespace region_gain
