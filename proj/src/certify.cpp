#include "region_gain/certify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "region_gain/parallel.hpp"

namespace region_gain {

using nlohmann::json;

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::certified: return "certified";
    case Verdict::refuted: return "refuted";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

Verdict classify_violations(std::size_t violations) {
  return violations == 0 ? Verdict::certified : Verdict::refuted;
}

Verdict classify_strict(double worst_value, double tol) {
  if (!(worst_value > tol)) return Verdict::refuted;
  if (worst_value <= 10.0 * tol) return Verdict::inconclusive;
  return Verdict::certified;
}

Verdict combine(const std::vector<Verdict>& vs) {
  bool all = true;
  for (const Verdict v : vs) {
    if (v == Verdict::refuted) return Verdict::refuted;
    if (v != Verdict::certified) all = false;
  }
  return all ? Verdict::certified : Verdict::inconclusive;
}

Verdict combine(std::initializer_list<Verdict> vs) { return combine(std::vector<Verdict>(vs)); }

json point_json(const VectorXd& y) {
  json a = json::array();
  for (Eigen::Index i = 0; i < y.size(); ++i) a.push_back(y[i]);
  return a;
}

json CheckReport::to_json() const {
  json v = json::array();
  for (const auto& p : violations) v.push_back(point_json(p));
  json j = {{"name", name},
            {"verdict", to_string(verdict)},
            {"n_samples", n_samples},
            {"worst_margin", number_or_inf(worst_margin)},
            {"violations", v},
            {"tolerances", tolerances},
            {"seed", seed}};
  if (!details.empty()) j["details"] = details;
  return j;
}

ScalarField default_density(const StorageFunction& V, const StorageFunction& W) {
  const Eigen::Index n = V.dimension, m = W.dimension;
  return [V, W, n, m](const VectorXd& y) {
    const double s = V(VectorXd(y.head(n))) + W(VectorXd(y.tail(m)));
    return s > 0.0 ? 1.0 / s : kInf;
  };
}

namespace {

constexpr std::size_t kMaxViolations = 32;

void note_violation(CheckReport& r, const VectorXd& y) {
  if (r.violations.size() < kMaxViolations) r.violations.push_back(y);
}

// Sign-definite reduction of per-sample values computed in parallel.
std::vector<double> evaluate_all(const std::vector<VectorXd>& pts, const std::function<double(const VectorXd&)>& fn) {
  std::vector<double> out(pts.size());
  parallel_chunks(pts.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) out[i] = fn(pts[i]);
  });
  return out;
}

}  // namespace

CheckReport check_density_condition(const VectorField& h, const ScalarField& rho, const Region& gap, std::size_t n_samples,
                           std::uint64_t seed) {
  CheckReport r;
  r.name = "density_divergence";
  r.seed = seed;
  r.tolerances = {{"min_value", 1e-8}, {"inconclusive_band", 1e-7}};
  std::vector<VectorXd> pts;
  try {
    pts = sample(gap, n_samples, seed);
  } catch (const EmptyRegionError&) {
    r.verdict = Verdict::certified;
    r.details["note"] = "gap empty, GAS by inclusion";
    return r;
  }
  const VectorField hr = [&](const VectorXd& y) { return VectorXd(h(y) * rho(y)); };
  const auto vals = evaluate_all(pts, [&](const VectorXd& y) { return divergence(hr, y); });
  const auto rhos = evaluate_all(pts, rho);

  r.n_samples = pts.size();
  double min_rho = kInf;
  std::size_t rho_bad = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    r.worst_margin = std::min(r.worst_margin, vals[i]);
    if (!(vals[i] > 1e-8)) note_violation(r, pts[i]);
    min_rho = std::min(min_rho, rhos[i]);
    if (!(rhos[i] > 0.0)) ++rho_bad;
  }
  // Product rule: div(h rho) = rho div h + grad rho . h.
  double residual = 0.0;
  for (std::size_t i = 0; i < std::min<std::size_t>(100, pts.size()); ++i) {
    const VectorXd& y = pts[i];
    const double step = 1e-5 * (1.0 + y.norm());
    VectorXd grad(y.size());
    VectorXd p = y;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      p[k] = y[k] + step;
      const double up = rho(p);
      p[k] = y[k] - step;
      grad[k] = (up - rho(p)) / (2.0 * step);
      p[k] = y[k];
    }
    const double rhs = rho(y) * divergence(h, y) + grad.dot(h(y));
    residual = std::max(residual, std::fabs(vals[i] - rhs));
  }
  r.details = {{"min_div_h_rho", number_or_inf(r.worst_margin)},
               {"min_rho", number_or_inf(min_rho)},
               {"rho_nonpositive_samples", rho_bad},
               {"product_rule_max_residual", residual}};
  r.verdict = rho_bad > 0 ? Verdict::refuted : classify_strict(r.worst_margin, 1e-8);
  return r;
}

CheckReport check_dissipation_condition(const VectorField& h, const StorageFunction& V, const StorageFunction& W,
                                      const ScalarGain& gamma, const ScalarGain& delta,
                                      const std::vector<VectorXd>& samples) {
  CheckReport r;
  r.name = "dissipation_density_condition";
  r.n_samples = samples.size();
  r.tolerances = {{"margin", 0.0}};
  const Eigen::Index n = V.dimension, m = W.dimension;
  const auto margins = evaluate_all(samples, [&](const VectorXd& y) {
    const double v = V(VectorXd(y.head(n))), w = W(VectorXd(y.tail(m)));
    return divergence(h, y) * (v + w) - (gamma(w) + delta(v));
  });
  std::size_t bad = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    r.worst_margin = std::min(r.worst_margin, margins[i]);
    if (margins[i] < 0.0) {
      ++bad;
      note_violation(r, samples[i]);
    }
  }
  r.details = {{"violation_count", bad}};
  r.verdict = classify_violations(bad);
  return r;
}

std::optional<VectorXd> newton_refine(const VectorField& h, const VectorXd& start, int max_iter) {
  VectorXd y = start;
  VectorXd fy = h(y);
  const Eigen::Index d = y.size();
  for (int it = 0; it < max_iter; ++it) {
    if (!fy.allFinite()) return std::nullopt;
    if (fy.norm() <= 1e-12) return y;
    Eigen::MatrixXd J(fy.size(), d);
    const double step = 1e-7 * (1.0 + y.norm());
    VectorXd p = y;
    for (Eigen::Index k = 0; k < d; ++k) {
      p[k] = y[k] + step;
      const VectorXd up = h(p);
      p[k] = y[k] - step;
      J.col(k) = (up - h(p)) / (2.0 * step);
      p[k] = y[k];
    }
    const VectorXd dir = J.colPivHouseholderQr().solve(-fy);
    if (!dir.allFinite()) return std::nullopt;
    double a = 1.0;
    bool improved = false;
    for (int k = 0; k < 40; ++k, a *= 0.5) {
      const VectorXd cand = y + a * dir;
      const VectorXd fc = h(cand);
      if (fc.allFinite() && fc.norm() < fy.norm()) {
        y = cand;
        fy = fc;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (fy.allFinite() && fy.norm() <= 1e-9 * (1.0 + y.norm())) return y;
  return std::nullopt;
}

std::vector<VectorXd> locate_equilibria(const VectorField& h, const Box& box, int grid) {
  if (grid < 2) throw std::invalid_argument("equilibrium search needs grid >= 2");
  const Eigen::Index d = box.dim();
  std::size_t total = 1;
  for (Eigen::Index k = 0; k < d; ++k) total *= static_cast<std::size_t>(grid);
  std::vector<std::optional<VectorXd>> found(total);
  parallel_chunks(total, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t idx = b; idx < e; ++idx) {
      VectorXd start(d);
      std::size_t rest = idx;
      for (Eigen::Index k = 0; k < d; ++k) {
        const auto i = static_cast<double>(rest % static_cast<std::size_t>(grid));
        rest /= static_cast<std::size_t>(grid);
        start[k] = box.lo[k] + (box.hi[k] - box.lo[k]) * i / (grid - 1);
      }
      found[idx] = newton_refine(h, start);
    }
  });
  std::vector<VectorXd> roots;
  const Box grown{box.lo.array() - 1e-9, box.hi.array() + 1e-9};
  for (const auto& r : found) {
    if (!r || !grown.contains(*r)) continue;
    const bool seen = std::any_of(roots.begin(), roots.end(), [&](const VectorXd& q) { return (q - *r).norm() < 1e-6; });
    if (!seen) roots.push_back(*r);
  }
  return roots;
}

CheckReport check_bendixson_condition(const VectorField& h, const Region& gap, std::size_t n_samples, std::uint64_t seed) {
  CheckReport r;
  r.name = "bendixson_divergence";
  r.seed = seed;
  r.tolerances = {{"div_abs_min", 1e-6}, {"field_norm_min", 1e-8}};
  std::vector<VectorXd> pts;
  try {
    pts = sample(gap, n_samples, seed);
  } catch (const EmptyRegionError&) {
    r.verdict = Verdict::certified;
    r.details["note"] = "gap empty, GAS by inclusion";
    return r;
  }
  if (!pts.empty() && pts.front().size() != 2) throw PrerequisiteError("planar check needs n = m = 1");
  r.n_samples = pts.size();
  const auto divs = evaluate_all(pts, [&](const VectorXd& y) { return divergence(h, y); });
  const auto norms = evaluate_all(pts, [&](const VectorXd& y) { return h(y).norm(); });

  double div_min = kInf, div_max = -kInf, min_abs_div = kInf, min_norm = kInf;
  std::optional<std::size_t> first_pos, first_neg;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    div_min = std::min(div_min, divs[i]);
    div_max = std::max(div_max, divs[i]);
    min_abs_div = std::min(min_abs_div, std::fabs(divs[i]));
    min_norm = std::min(min_norm, norms[i]);
    if (divs[i] > 0.0 && !first_pos) first_pos = i;
    if (divs[i] < 0.0 && !first_neg) first_neg = i;
    if (std::fabs(divs[i]) < 1e-6 || norms[i] < 1e-8) note_violation(r, pts[i]);
  }
  const bool sign_flip = first_pos && first_neg;

  // Equilibria: refine the samples where |h| is smallest.
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t probes = std::min<std::size_t>(16, pts.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(probes), order.end(),
                    [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
  json equilibria = json::array();
  std::vector<VectorXd> eq_points;
  for (std::size_t k = 0; k < probes; ++k) {
    const auto root = newton_refine(h, pts[order[k]]);
    if (!root || !gap.contains(*root)) continue;
    if (std::any_of(eq_points.begin(), eq_points.end(), [&](const VectorXd& q) { return (q - *root).norm() < 1e-6; }))
      continue;
    eq_points.push_back(*root);
    equilibria.push_back({{"point", point_json(*root)}, {"from_sample", point_json(pts[order[k]])}});
    note_violation(r, *root);
  }

  r.worst_margin = std::min(min_abs_div - 1e-6, min_norm - 1e-8);
  r.details = {{"div_min", number_or_inf(div_min)},
               {"div_max", number_or_inf(div_max)},
               {"min_abs_div", number_or_inf(min_abs_div)},
               {"min_field_norm", number_or_inf(min_norm)},
               {"sign_flip", sign_flip},
               {"equilibria_in_region", equilibria}};
  if (sign_flip)
    r.details["straddling_pair"] = {point_json(pts[*first_pos]), point_json(pts[*first_neg])};

  if (sign_flip || !eq_points.empty())
    r.verdict = Verdict::refuted;
  else
    r.verdict = combine({classify_strict(min_abs_div, 1e-6), classify_strict(min_norm, 1e-8)});
  return r;
}

// ---------------------------------------------------------------------------

double boundary_flux(const VectorField& field, const Polyline& curve) {
  const std::size_t k = curve.vertices.size();
  if (k < 3) throw std::invalid_argument("flux needs a polyline with at least 3 vertices");
  std::vector<VectorXd> values(k);
  for (std::size_t i = 0; i < k; ++i) values[i] = field(VectorXd(curve.vertices[i]));
  double flux = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = (i + 1) % k;
    const Eigen::Vector2d d = curve.vertices[j] - curve.vertices[i];
    const Eigen::Vector2d mean = 0.5 * (values[i] + values[j]).head<2>();
    flux += mean.x() * d.y() - mean.y() * d.x();
  }
  return flux;
}

double max_normal_component(const VectorField& field, const Polyline& curve) {
  double worst = -kInf;
  for (std::size_t i = 0; i < curve.vertices.size(); ++i) {
    const VectorXd v = field(VectorXd(curve.vertices[i]));
    worst = std::max(worst, v.head<2>().dot(curve.normals[i]));
  }
  return worst;
}

bool polygon_contains(const Polyline& curve, const Eigen::Vector2d& p) {
  bool in = false;
  const auto& v = curve.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y() > p.y()) != (v[j].y() > p.y()) &&
        p.x() < (v[j].x() - v[i].x()) * (p.y() - v[i].y()) / (v[j].y() - v[i].y()) + v[i].x())
      in = !in;
  }
  return in;
}

double enclosed_divergence_integral(const VectorField& field, const Polyline& curve, int cells) {
  Eigen::Vector2d lo = curve.vertices.front(), hi = lo;
  for (const auto& v : curve.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double dx = (hi.x() - lo.x()) / cells, dy = (hi.y() - lo.y()) / cells;
  std::vector<double> rows(static_cast<std::size_t>(cells), 0.0);
  parallel_chunks(rows.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t j = b; j < e; ++j)
      for (int i = 0; i < cells; ++i) {
        const Eigen::Vector2d p(lo.x() + (i + 0.5) * dx, lo.y() + (static_cast<double>(j) + 0.5) * dy);
        if (polygon_contains(curve, p)) rows[j] += divergence(field, VectorXd(p));
      }
  });
  return std::accumulate(rows.begin(), rows.end(), 0.0) * dx * dy;
}

// ---------------------------------------------------------------------------

std::string to_string(Mode m) {
  switch (m) {
    case Mode::local: return "local";
    case Mode::global: return "global";
    case Mode::almost_global: return "almost-global";
    case Mode::planar: return "planar";
  }
  return "?";
}

std::optional<Mode> parse_mode(const std::string& s) {
  if (s == "local") return Mode::local;
  if (s == "global") return Mode::global;
  if (s == "almost-global") return Mode::almost_global;
  if (s == "planar") return Mode::planar;
  return std::nullopt;
}

namespace {

json thresholds_json(const Thresholds& t) {
  return {{"M_lo", number_or_inf(t.M_lo)},     {"M_hi", number_or_inf(t.M_hi)},
          {"N_lo", number_or_inf(t.N_lo)},     {"N_hi", number_or_inf(t.N_hi)},
          {"M_tilde", number_or_inf(t.M_tilde)}, {"M_hat", number_or_inf(t.M_hat)},
          {"valid", t.valid}};
}

json inclusion_json(const InclusionCheck& c) {
  json pts = json::array();
  for (const auto& p : c.counterexamples) pts.push_back(point_json(p));
  return {{"n_samples", c.n_samples},
          {"violations", c.violations},
          {"worst_margin", number_or_inf(c.worst_margin)},
          {"trivial", c.trivial},
          {"counterexamples", pts}};
}

Box scaled(const Box& b, double f) { return {b.lo * f, b.hi * f}; }

}  // namespace

json RegimeCertificate::to_json() const {
  json checks_json = json::array();
  for (const auto& c : checks) checks_json.push_back(c.to_json());
  return {{"regime", regime}, {"thresholds", thresholds_json(thresholds)}, {"checks", checks_json},
          {"verdict", to_string(verdict)}};
}

json CertificationResult::to_json() const {
  json regs = json::object();
  for (const auto& r : regimes) regs[r.regime] = r.to_json();
  json th = json::array();
  for (const auto& c : region_checks) th.push_back(c.to_json());
  json j = {{"kind", "certificate"}, {"spec", spec_name},     {"mode", to_string(mode)},
            {"verdict", to_string(verdict)}, {"conclusion", conclusion}, {"regimes", regs},
            {"region_checks", th}};
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

ThresholdInput regime_thresholds(const SystemSpec& spec, bool local, bool auto_search) {
  const auto& given = local ? spec.local_thresholds : spec.global_thresholds;
  if (!auto_search) {
    if (!given) throw PrerequisiteError(std::string("spec has no thresholds.") + (local ? "local" : "global"));
    return *given;
  }
  const RegimeGains& g = local ? spec.local_gains : spec.global_gains;
  const auto scan = scan_small_gain(g.gamma, g.delta, 0.0, spec.s_max, spec.s_max / 2000.0);
  ThresholdInput in = given.value_or(ThresholdInput{});
  if (local) {
    const auto& first = scan.front();
    if (first.verdict != SgcVerdict::holds)
      throw PrerequisiteError("auto thresholds: the small-gain condition fails right above 0");
    in.M_lo = 0.0;
    in.N_lo = 0.0;
    in.M_hi = first.hi;
    if (!given || std::isinf(given->N_hi)) in.N_hi = g.delta(in.M_hi);
  } else {
    const auto& last = scan.back();
    if (last.verdict != SgcVerdict::holds)
      throw PrerequisiteError("auto thresholds: the small-gain condition fails at the top of the gain range");
    in.M_lo = last.lo > 0.0 ? last.lo : 1e-3 * spec.s_max;
    in.M_hi = kInf;
    in.N_hi = kInf;
    if (!given || given->N_lo == 0.0) in.N_lo = invert(g.gamma, in.M_lo);
  }
  return in;
}

RegimeCertificate certify_regime(const SystemSpec& spec, bool local, const CertifyOptions& opts) {
  const ThresholdInput in = regime_thresholds(spec, local, opts.auto_thresholds);
  const RegimeGains& G = local ? spec.local_gains : spec.global_gains;
  const std::uint64_t seed = opts.seed.value_or(spec.sampling.seed) + (local ? 0 : 1000);
  const std::size_t n = opts.n_samples.value_or(spec.sampling.n_samples);
  const Box& box = spec.sampling.box;
  const VectorField h = spec.system.field();

  RegimeCertificate rc;
  rc.regime = local ? "local" : "global";

  CheckReport setting;
  setting.name = "regime_setting";
  const bool ok_setting = local ? (in.M_lo == 0.0 && in.N_lo == 0.0 && (std::isfinite(in.M_hi) || std::isfinite(in.N_hi)))
                                : ((in.M_lo > 0.0 || in.N_lo > 0.0) && std::isinf(in.M_hi) && std::isinf(in.N_hi));
  setting.verdict = ok_setting ? Verdict::certified : Verdict::refuted;
  setting.details["requirement"] = local ? "M_lo = N_lo = 0 and a finite upper threshold"
                                         : "M_lo > 0 or N_lo > 0, with M_hi = N_hi = inf";
  rc.checks.push_back(setting);

  CheckReport thr;
  thr.name = "thresholds";
  try {
    rc.thresholds = compute_thresholds(G.gamma, G.delta, in.M_lo, in.M_hi, in.N_lo, in.N_hi);
  } catch (const InversionError& e) {
    thr.verdict = Verdict::refuted;
    thr.details["error"] = e.what();
    rc.checks.push_back(thr);
    rc.verdict = Verdict::refuted;
    return rc;
  }
  const Thresholds& t = rc.thresholds;
  thr.worst_margin = t.M_hat - t.M_tilde;
  thr.verdict = t.valid ? Verdict::certified : Verdict::refuted;
  thr.details = {{"M_tilde", number_or_inf(t.M_tilde)}, {"M_hat", number_or_inf(t.M_hat)}};
  rc.checks.push_back(thr);
  if (!t.valid) {
    rc.verdict = Verdict::refuted;
    return rc;
  }

  // sigma and its sandwich on the range of V the regime uses.
  const ScalarGain sigma = construct_sigma(G.gamma, G.delta, spec.s_max);
  double a, b;
  if (local) {
    b = std::min(in.M_hi, spec.s_max);
    a = 1e-3 * b;
  } else {
    b = spec.s_max;
    a = in.M_lo > 0.0 ? std::min(in.M_lo, 0.5 * b) : 1e-3 * b;
  }
  const SigmaReport sr = validate_sigma(sigma, G.gamma, G.delta, a, b, (b - a) / 1000.0);
  CheckReport sand;
  sand.name = "sigma_sandwich";
  sand.n_samples = sr.samples;
  sand.worst_margin = std::min(sr.min_lower_gap, sr.min_upper_gap);
  sand.verdict = sr.ok ? Verdict::certified : Verdict::refuted;
  sand.details = {{"interval", {a, b}},
                  {"min_sigma_minus_delta", number_or_inf(sr.min_lower_gap)},
                  {"min_gamma_inv_minus_sigma", number_or_inf(sr.min_upper_gap)}};
  if (sr.first_violation) {
    sand.details["first_violation"] = *sr.first_violation;
    sand.details["violation_kind"] = sr.violation_kind;
  }
  rc.checks.push_back(sand);

  rc.merged.emplace(sigma, spec.V, spec.W);
  const MergedLyapunov& U = *rc.merged;
  const ScalarField Uf = U.as_field();

  // Inclusion chain.
  {
    const InclusionReport ir = check_inclusion_chain(t, spec.V, spec.W, U, n, seed + 1, box);
    CheckReport c;
    c.name = "inclusion_chain";
    c.seed = seed + 1;
    c.n_samples = ir.inner.n_samples + ir.middle.n_samples + ir.outer.n_samples;
    c.worst_margin = std::min({ir.inner.worst_margin, ir.middle.worst_margin, ir.outer.worst_margin});
    for (const auto* part : {&ir.inner, &ir.middle, &ir.outer})
      for (const auto& p : part->counterexamples) note_violation(c, p);
    c.verdict = ir.passed() ? Verdict::certified : Verdict::refuted;
    c.details = {{"inner", inclusion_json(ir.inner)},
                 {"middle", inclusion_json(ir.middle)},
                 {"outer", inclusion_json(ir.outer)},
                 {"diagnostic_upper_implication", inclusion_json(ir.upper_implication)},
                 {"diagnostic_lower_implication", inclusion_json(ir.lower_implication)}};
    rc.checks.push_back(c);
  }

  // ISS implications on S.
  const Region S = Region::S_set(t, spec.V, spec.W, box);
  std::vector<VectorXd> s_samples;
  try {
    s_samples = sample(S, n, seed + 2);
  } catch (const EmptyRegionError& e) {
    CheckReport c;
    c.name = "iss_implications";
    c.verdict = Verdict::inconclusive;
    c.details["error"] = e.what();
    rc.checks.push_back(c);
  }
  if (!s_samples.empty()) {
    const auto rx = verify_iss_implication(Subsystem::x, spec.V, G.gamma, spec.W, spec.system.f, s_samples);
    const auto rz = verify_iss_implication(Subsystem::z, spec.W, G.delta, spec.V, spec.system.g, s_samples);
    for (const auto* rep : {&rx, &rz}) {
      CheckReport c;
      c.name = rep->subsystem == Subsystem::x ? "iss_implication_x" : "iss_implication_z";
      c.seed = seed + 2;
      c.n_samples = rep->n_samples;
      c.worst_margin = rep->worst_margin;
      c.violations = rep->violations;
      c.tolerances = {{"slack_rel", rep->slack_rel}};
      c.details = {{"antecedent_count", rep->antecedent_count},
                   {"violation_count", rep->violation_count},
                   {"pass_rate", rep->pass_rate()}};
      c.verdict = classify_violations(rep->violation_count);
      rc.checks.push_back(c);
    }
  }

  // Dini decrease on the shell.
  {
    CheckReport c;
    c.name = "shell_decrease";
    c.seed = seed + 3;
    c.tolerances = {{"slack", 1e-5}};
    const Box shell_box = std::isfinite(t.M_hat) ? sublevel_bounding_box(Uf, t.M_hat, spec.system.dim()) : box;
    const double lo = t.M_tilde, hi = t.M_hat;
    const Region shell(RegionKind::shell,
                       [&](const VectorXd& y) {
                         const double u = Uf(y);
                         return lo <= u && u <= hi && S.contains(y);
                       },
                       shell_box, !(lo < hi));
    try {
      const auto pts = sample(shell, n, seed + 3);
      const Eigen::Index nn = spec.system.n, mm = spec.system.m;
      const auto taus = default_dini_taus();
      const auto margins = evaluate_all(pts, [&](const VectorXd& y) {
        const VectorXd x = y.head(nn), z = y.tail(mm);
        const double E = decrease_rate_E(U, spec.V.lambda, spec.W.lambda, x, z);
        return -E - dini_derivative<double>(Uf, h, y, taus).value;
      });
      std::size_t bad = 0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        c.worst_margin = std::min(c.worst_margin, margins[i]);
        if (margins[i] < -1e-5) {
          ++bad;
          note_violation(c, pts[i]);
        }
      }
      c.n_samples = pts.size();
      c.details["violation_count"] = bad;
      c.verdict = classify_violations(bad);
    } catch (const EmptyRegionError& e) {
      c.verdict = Verdict::inconclusive;
      c.details["error"] = e.what();
    }
    rc.checks.push_back(c);
  }

  std::vector<Verdict> vs;
  for (const auto& c : rc.checks) vs.push_back(c.verdict);
  rc.verdict = combine(vs);
  return rc;
}

CertificationResult certify(const SystemSpec& spec, Mode mode, const CertifyOptions& opts) {
  if (mode == Mode::planar && (spec.system.n != 1 || spec.system.m != 1))
    throw PrerequisiteError("planar mode needs n = m = 1 (spec has n + m = " + std::to_string(spec.system.dim()) + ")");

  CertificationResult res;
  res.mode = mode;
  res.spec_name = spec.name;
  const std::uint64_t seed = opts.seed.value_or(spec.sampling.seed);
  const std::size_t n = opts.n_samples.value_or(spec.sampling.n_samples);

  const bool need_local = mode != Mode::global;
  const bool need_global = mode != Mode::local;
  // Resolve thresholds up front so missing blocks fail before any sampling.
  if (need_local) regime_thresholds(spec, true, opts.auto_thresholds);
  if (need_global) regime_thresholds(spec, false, opts.auto_thresholds);
  if (need_local) res.regimes.push_back(certify_regime(spec, true, opts));
  if (need_global) res.regimes.push_back(certify_regime(spec, false, opts));

  std::vector<Verdict> vs;
  for (const auto& r : res.regimes) vs.push_back(r.verdict);

  if (mode == Mode::local) {
    res.conclusion = "the sublevel set {U <= M_hat} lies in the basin of attraction of the origin";
  } else if (mode == Mode::global) {
    res.conclusion = "the sublevel set {U <= M_tilde} is globally attractive";
  } else {
    const RegimeCertificate& L = res.regimes[0];
    const RegimeCertificate& G = res.regimes[1];
    CheckReport pre;
    pre.name = "threshold_ordering";
    const bool ordered = L.thresholds.M_hi < G.thresholds.M_lo || L.thresholds.N_hi < G.thresholds.N_lo;
    pre.verdict = ordered ? Verdict::certified : Verdict::refuted;
    pre.details = {{"M_local", number_or_inf(L.thresholds.M_hi)}, {"M_global", number_or_inf(G.thresholds.M_lo)},
                   {"N_local", number_or_inf(L.thresholds.N_hi)}, {"N_global", number_or_inf(G.thresholds.N_lo)}};
    res.region_checks.push_back(pre);

    if (!L.merged || !G.merged) {
      CheckReport skip;
      skip.name = mode == Mode::planar ? "bendixson_divergence" : "density_divergence";
      skip.verdict = Verdict::refuted;
      skip.details["note"] = "a regime certificate has invalid thresholds";
      res.region_checks.push_back(skip);
    } else {
      const ScalarField Ug = G.merged->as_field();
      const ScalarField Ul = L.merged->as_field();
      const double Mg = G.thresholds.M_tilde, Ml = L.thresholds.M_hat;
      const Box gap_box = sublevel_bounding_box(Ug, Mg, spec.system.dim());
      const Region gap = Region::gap(Ug, Mg, Ul, Ml, gap_box);
      res.extra["gap"] = {{"U_global_level", Mg}, {"U_local_level", Ml}, {"box_half_width", gap_box.hi[0]}};
      const VectorField h = spec.system.field();

      if (mode == Mode::almost_global) {
        const ScalarField rho = spec.rho ? spec.rho : default_density(spec.V, spec.W);
        res.region_checks.push_back(check_density_condition(h, rho, gap, n, seed + 5));
        if (spec.dissipative_form) {
          std::vector<VectorXd> pts;
          try {
            pts = sample(gap, n, seed + 6);
          } catch (const EmptyRegionError&) {
          }
          res.region_checks.push_back(check_dissipation_condition(h, spec.V, spec.W, spec.global_gains.gamma,
                                                                 spec.global_gains.delta, pts));
        }
        res.conclusion = "the origin is almost globally asymptotically stable";
      } else {
        res.region_checks.push_back(check_bendixson_condition(h, gap, n, seed + 5));

        CheckReport flux;
        flux.name = "boundary_flux";
        flux.tolerances = {{"divergence_theorem_rel", 0.02}};
        try {
          const Polyline outer = trace_level_curve(Ug, Mg, scaled(gap_box, 1.05));
          const Box inner_box = sublevel_bounding_box(Ul, Ml, spec.system.dim());
          const Polyline inner = trace_level_curve(Ul, Ml, scaled(inner_box, 1.05));
          const double f_out = boundary_flux(h, outer), f_in = boundary_flux(h, inner);
          const double pn_out = max_normal_component(h, outer), pn_in = max_normal_component(h, inner);
          const double div_int = enclosed_divergence_integral(h, outer) - enclosed_divergence_integral(h, inner);
          const double rel = std::fabs((f_out - f_in) - div_int) / std::max(1e-12, std::fabs(div_int));
          flux.worst_margin = -std::max(f_out, f_in);
          flux.details = {{"flux_outer", f_out},
                          {"flux_inner", f_in},
                          {"max_normal_component_outer", pn_out},
                          {"max_normal_component_inner", pn_in},
                          {"area_outer", outer.signed_area()},
                          {"area_inner", inner.signed_area()},
                          {"divergence_integral_over_gap", div_int},
                          {"divergence_theorem_rel_error", rel},
                          {"vertices_outer", outer.vertices.size()},
                          {"vertices_inner", inner.vertices.size()}};
          if (f_out >= 0.0 || f_in >= 0.0 || rel > 0.02)
            flux.verdict = Verdict::refuted;
          else if (pn_out >= 0.0 || pn_in >= 0.0)
            flux.verdict = Verdict::inconclusive;
          else
            flux.verdict = Verdict::certified;
          if (!opts.polyline_dir.empty()) {
            std::filesystem::create_directories(opts.polyline_dir);
            std::ofstream o(std::filesystem::path(opts.polyline_dir) / "level_curve_outer.csv");
            write_polyline_csv(o, outer);
            std::ofstream i(std::filesystem::path(opts.polyline_dir) / "level_curve_inner.csv");
            write_polyline_csv(i, inner);
            flux.details["curves"] = {"level_curve_outer.csv", "level_curve_inner.csv"};
          }
        } catch (const ContourError& e) {
          flux.verdict = Verdict::inconclusive;
          flux.details["error"] = e.what();
        }
        res.region_checks.push_back(flux);
        res.conclusion = "the origin is globally asymptotically stable";
      }
    }
  }
  for (const auto& c : res.region_checks) vs.push_back(c.verdict);
  res.verdict = combine(vs);
  return res;
}

}  // namespace region_gain
