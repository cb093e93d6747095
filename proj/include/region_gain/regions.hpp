#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "region_gain/lyapunov.hpp"
#include "region_gain/types.hpp"

namespace region_gain {

enum class RegionKind { box, S_set, sublevel, shell, gap };

std::string to_string(RegionKind k);

/// Pointwise-decidable subset of R^k with a box used for sampling. Unbounded
/// sets carry a truncation box. Threshold comparisons are inclusive.
class Region {
 public:
  using Predicate = std::function<bool(const VectorXd&)>;

  Region(RegionKind kind, Predicate predicate, Box bounding_box, bool degenerate = false);

  static Region box(Box b);
  /// {M_lo <= V <= M_hi, W <= N_hi} u {V <= M_hi, N_lo <= W <= N_hi}.
  static Region S_set(const Thresholds& t, StorageFunction V, StorageFunction W, Box truncation);
  static Region sublevel(ScalarField U, double c, Box bounding_box);
  /// {lo <= U <= hi}; lo >= hi is a measure-zero (degenerate) shell.
  static Region shell(ScalarField U, double lo, double hi, Box bounding_box);
  /// {U_g <= M_tilde_g} n {U_l >= M_hat_l}.
  static Region gap(ScalarField U_g, double M_tilde_g, ScalarField U_l, double M_hat_l, Box bounding_box);

  bool contains(const VectorXd& y) const { return predicate_(y); }
  RegionKind kind() const { return kind_; }
  const Box& bounding_box() const { return box_; }
  bool degenerate() const { return degenerate_; }

 private:
  RegionKind kind_;
  Predicate predicate_;
  Box box_;
  bool degenerate_;
};

inline bool contains(const Region& r, const VectorXd& y) { return r.contains(y); }

class EmptyRegionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplingOptions {
  std::size_t max_rejections = 10'000'000;
  std::size_t probe_proposals = 100'000;  // acceptance is judged after this many
  double min_acceptance = 1e-4;            // below it, switch to a Halton sweep
};

/// Rejection sampling from the uniform law on the bounding box restricted to
/// the region. The proposal stream depends only on the seed.
std::vector<VectorXd> sample(const Region& r, std::size_t n, std::uint64_t seed, const SamplingOptions& opts = {});

/// Smallest cube [-R, R]^dim (R doubled from `start`) whose surface samples
/// all satisfy f > c. Throws EvaluationError if R exceeds 2^40 * start.
Box sublevel_bounding_box(const ScalarField& f, double c, Eigen::Index dim, double start = 1.0);

struct InclusionCheck {
  std::string name;
  std::size_t n_samples = 0;
  std::size_t violations = 0;
  double worst_margin = kInf;  // min over samples of (bound - value); >= 0 means inside
  bool trivial = false;        // containing set is the whole space
  std::vector<VectorXd> counterexamples;
  bool passed() const { return violations == 0; }
};

struct InclusionReport {
  InclusionCheck inner;   // Omega(V <= M_lo) x Omega(W <= N_lo) in Omega(U <= M_tilde)
  InclusionCheck middle;  // Omega(U <= M_tilde) in Omega(U <= M_hat)
  InclusionCheck outer;   // Omega(U <= M_hat) in Omega(V <= M_hi) x Omega(W <= N_hi)
  // Pointwise implications used in the textbook argument, reported only.
  InclusionCheck upper_implication;  // U <= M_hat => max{V, W} <= min{M_hi, N_hi}
  InclusionCheck lower_implication;  // M_tilde <= U => max{M_lo, N_lo} <= min{V, W}
  bool passed() const { return inner.passed() && middle.passed() && outer.passed(); }
};

/// Samples each smaller set of the chain and tests membership in the larger.
/// Product sets are sampled factor by factor; a zero threshold pins that
/// factor to the origin. `box` bounds the samples of unbounded sets.
InclusionReport check_inclusion_chain(const Thresholds& t, const StorageFunction& V, const StorageFunction& W,
                                      const MergedLyapunov& U, std::size_t n_samples, std::uint64_t seed,
                                      const Box& box);

struct Polyline {
  std::vector<Eigen::Vector2d> vertices;  // closed: last vertex joins the first
  std::vector<Eigen::Vector2d> normals;   // unit outward normals per vertex
  double signed_area() const;             // shoelace, positive for CCW
  double perimeter() const;
};

class ContourError : public EvaluationError {
 public:
  enum class Kind { open, none };
  ContourError(Kind kind, const std::string& what) : EvaluationError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Marching squares on a cells_x x cells_y grid of the box, with saddle
/// cells resolved by the cell-centre average. All closed components are
/// returned counterclockwise, largest enclosed area first.
std::vector<Polyline> trace_level_curves(const ScalarField& U, double level, const Box& box, int cells_x = 512,
                                         int cells_y = 512);

/// The component enclosing the largest area.
Polyline trace_level_curve(const ScalarField& U, double level, const Box& box, int cells_x = 512, int cells_y = 512);

/// Columns s_index, y1, y2, n1, n2.
void write_polyline_csv(std::ostream& out, const Polyline& p);

}  // namespace region_gain
