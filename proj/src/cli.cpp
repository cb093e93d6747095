#include "region_gain/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "region_gain/certify.hpp"
#include "region_gain/expr.hpp"

namespace region_gain::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GainFlags {
  std::optional<double> gamma_factor;
  std::optional<double> delta_factor;
};

SystemSpec load(const std::string& path, const GainFlags& gf) {
  json doc = read_spec_document(path);
  if (gf.gamma_factor || gf.delta_factor) apply_gain_factors(doc, gf.gamma_factor, gf.delta_factor);
  return load_spec(doc);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << j.dump(2) << '\n';
}

json intervals_json(const std::vector<SgcInterval>& iv) {
  json a = json::array();
  for (const auto& i : iv)
    a.push_back({{"lo", i.lo}, {"hi", i.hi}, {"lo_open", i.lo_open},
                 {"verdict", i.verdict == SgcVerdict::holds ? "holds" : "fails"}});
  return a;
}

json gain_block(const RegimeGains& g, double a, double b, double sup_step) {
  const auto scan = scan_small_gain(g.gamma, g.delta, a, b, (b - a) / 4000.0);
  const ComposedSup sup = sup_composed(g.gamma, g.delta, a, b, sup_step);
  const BilimitRatios br = bilimit_ratios(g.gamma, g.delta, 1e-2, 1e2);
  json small = json::array(), large = json::array();
  for (std::size_t k = 0; k < br.small_probes.size(); ++k) {
    small.push_back({{"s", br.small_probes[k]}, {"ratio", br.small_ratios[k]}});
    large.push_back({{"s", br.large_probes[k]}, {"ratio", br.large_ratios[k]}});
  }
  return {{"sgc_intervals", intervals_json(scan)},
          {"sup_composed_gain", {{"value", sup.sup}, {"argsup", sup.argsup}, {"grid_step", sup_step}}},
          {"bilimit_ratios",
           {{"worst_small", br.worst_small},
            {"worst_large", br.worst_large},
            {"both_below_one", br.worst_small < 1.0 && br.worst_large < 1.0},
            {"small_probes", small},
            {"large_probes", large}}}};
}

int cmd_analyze_gains(const std::string& spec_path, const GainFlags& gf, std::vector<double> interval,
                      const std::string& out_path, std::ostream& out) {
  const SystemSpec spec = load(spec_path, gf);
  const double a = interval.empty() ? 0.0 : interval[0];
  const double b = interval.empty() ? spec.s_max : interval[1];
  if (!(0.0 <= a && a < b)) throw SpecError("--interval: need 0 <= a < b");

  const json global = gain_block(spec.global_gains, a, b, 1e-4);
  json report = {{"kind", "gain_analysis"},
                 {"spec", spec.name},
                 {"interval", {a, b}},
                 {"sgc_intervals", global["sgc_intervals"]},
                 {"sup_composed_gain", global["sup_composed_gain"]["value"]},
                 {"argsup_composed_gain", global["sup_composed_gain"]["argsup"]},
                 {"sup_grid_step", 1e-4},
                 {"bilimit_ratios", global["bilimit_ratios"]},
                 {"reference_sup", kReferenceComposedSup},
                 {"discrepancy", global["sup_composed_gain"]["value"].get<double>() - kReferenceComposedSup}};
  if (spec.document.contains("gains") && spec.document["gains"].contains("local"))
    report["regimes"] = {{"local", gain_block(spec.local_gains, a, b, 1e-4)}, {"global", global}};

  const fs::path path(out_path);
  write_json(path, report);
  const fs::path csv = path.parent_path() / (path.stem().string() + "_composed.csv");
  std::ofstream c(csv);
  c << "s,gamma_delta,s_identity\n" << std::setprecision(12);
  const int points = 2000;
  for (int i = 0; i <= points; ++i) {
    const double s = a + (b - a) * i / points;
    c << s << ',' << spec.global_gains.gamma(spec.global_gains.delta(s)) << ',' << s << '\n';
  }
  out << "sup gamma(delta(s)) = " << report["sup_composed_gain"].get<double>() << " (reference "
      << kReferenceComposedSup << ", discrepancy " << report["discrepancy"].get<double>() << ")\n";
  out << "bilimit worst ratios: small " << global["bilimit_ratios"]["worst_small"].get<double>() << ", large "
      << global["bilimit_ratios"]["worst_large"].get<double>() << '\n';
  return kCertified;
}

int cmd_certify(const std::string& spec_path, const GainFlags& gf, const std::string& mode_name, bool auto_thr,
                std::optional<std::uint64_t> seed, std::optional<std::size_t> samples, const std::string& out_path,
                std::ostream& out) {
  const auto mode = parse_mode(mode_name);
  if (!mode) throw SpecError("--mode: unknown mode '" + mode_name + "'");
  const SystemSpec spec = load(spec_path, gf);
  CertifyOptions opts;
  opts.seed = seed;
  opts.n_samples = samples;
  opts.auto_thresholds = auto_thr;
  const fs::path path(out_path);
  if (*mode == Mode::planar) opts.polyline_dir = path.has_parent_path() ? path.parent_path().string() : ".";
  const CertificationResult res = certify(spec, *mode, opts);
  json j = res.to_json();
  j["gain_factors"] = {{"gamma", gf.gamma_factor ? json(*gf.gamma_factor) : json(nullptr)},
                       {"delta", gf.delta_factor ? json(*gf.delta_factor) : json(nullptr)}};
  write_json(path, j);
  out << spec.name << " [" << to_string(*mode) << "]: " << to_string(res.verdict) << '\n';
  for (const auto& r : res.regimes)
    for (const auto& c : r.checks)
      out << "  " << r.regime << '/' << c.name << ": " << to_string(c.verdict) << '\n';
  for (const auto& c : res.region_checks) out << "  " << c.name << ": " << to_string(c.verdict) << '\n';
  return res.verdict == Verdict::certified ? kCertified : kNotCertified;
}

// Merged function of a regime when its thresholds are usable.
std::optional<MergedLyapunov> regime_merged(const SystemSpec& spec, bool local, Thresholds* t) {
  const auto& in = local ? spec.local_thresholds : spec.global_thresholds;
  if (!in) return std::nullopt;
  const RegimeGains& g = local ? spec.local_gains : spec.global_gains;
  try {
    *t = compute_thresholds(g.gamma, g.delta, in->M_lo, in->M_hi, in->N_lo, in->N_hi);
    if (!t->valid) return std::nullopt;
    return MergedLyapunov(construct_sigma(g.gamma, g.delta, spec.s_max), spec.V, spec.W);
  } catch (const EvaluationError&) {
    return std::nullopt;
  }
}

int cmd_simulate(const std::string& spec_path, const GainFlags& gf, std::size_t n_init, std::optional<double> T,
                 std::optional<double> dt, std::optional<std::uint64_t> seed, const std::string& out_dir,
                 std::ostream& out) {
  const SystemSpec spec = load(spec_path, gf);
  IntegrateOptions opts = spec.simulation;
  if (T) opts.T = *T;
  if (dt) opts.dt = *dt;
  if (!(opts.T > 0.0) || !(opts.dt > 0.0)) throw SpecError("--T and --dt must be positive");

  Thresholds tg, tl;
  const auto Ug = regime_merged(spec, false, &tg);
  const auto Ul = regime_merged(spec, true, &tl);
  const ScalarField U = Ug ? Ug->as_field() : ScalarField{};

  const Box& box = spec.sampling.box;
  std::mt19937_64 rng(seed.value_or(spec.sampling.seed));
  std::vector<VectorXd> inits(n_init, VectorXd(spec.system.dim()));
  for (auto& y : inits)
    for (Eigen::Index k = 0; k < y.size(); ++k)
      y[k] = std::uniform_real_distribution<double>(box.lo[k], box.hi[k])(rng);

  const auto trajs = integrate_ensemble(spec.system.field(), inits, opts, U);

  std::optional<Region> gap;
  if (Ug && Ul && spec.system.dim() == 2) {
    const ScalarField ug = Ug->as_field(), ul = Ul->as_field();
    gap = Region::gap(ug, tg.M_tilde, ul, tl.M_hat, sublevel_bounding_box(ug, tg.M_tilde, 2));
  }

  fs::create_directories(out_dir);
  std::size_t converged = 0, blow_ups = 0, recurrent = 0;
  double max_U = U ? 0.0 : std::nan("");
  json flags = json::array(), files = json::array(), terminal = json::array();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Trajectory& tr = trajs[i];
    std::ostringstream name;
    name << "traj_" << std::setw(3) << std::setfill('0') << i << ".csv";
    std::ofstream o(fs::path(out_dir) / name.str());
    write_trajectory_csv(o, tr);
    files.push_back(name.str());
    if (tr.status == TrajectoryStatus::blow_up) ++blow_ups;
    const VectorXd& yT = tr.final_state();
    if (tr.status == TrajectoryStatus::ok && yT.norm() < 1e-3) ++converged;
    if (U && !tr.U_values.empty()) max_U = std::max(max_U, tr.U_values.back());
    terminal.push_back(yT.norm());
    bool flag = false;
    if (gap) flag = is_recurrent(tr, *gap, 1e-3, 10.0 * opts.dt);
    if (flag) ++recurrent;
    flags.push_back(flag);
  }

  json ensemble = {{"kind", "ensemble"},
                   {"spec", spec.name},
                   {"n_init", n_init},
                   {"T", opts.T},
                   {"dt", opts.dt},
                   {"method", opts.method == Method::rk4 ? "rk4" : "rk45"},
                   {"seed", seed.value_or(spec.sampling.seed)},
                   {"init_box", {{"lo", point_json(box.lo)}, {"hi", point_json(box.hi)}}},
                   {"convergence_tolerance", 1e-3},
                   {"converged_count", converged},
                   {"blow_ups", blow_ups},
                   {"max_terminal_U", number_or_inf(max_U)},
                   {"terminal_norms", terminal},
                   {"recurrence_checked", gap.has_value()},
                   {"recurrence_flags", flags},
                   {"recurrent_count", recurrent},
                   {"trajectories", files}};
  write_json(fs::path(out_dir) / "ensemble.json", ensemble);
  out << spec.name << ": " << converged << '/' << n_init << " converged, " << blow_ups << " blow-ups, " << recurrent
      << " recurrent\n";
  if (2 * blow_ups > n_init) return kEvalError;
  return kCertified;
}

// ---------------------------------------------------------------------------

std::string fmt(const json& v) {
  if (v.is_number_float()) {
    std::ostringstream s;
    s << std::setprecision(6) << v.get<double>();
    return s.str();
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string conclusion_for(const std::string& mode) {
  if (mode == "planar") return "globally asymptotically stable (sampled evidence)";
  if (mode == "almost-global") return "almost globally asymptotically stable (sampled evidence)";
  if (mode == "global") return "sublevel set of U globally attractive (sampled evidence)";
  return "sublevel set of U inside the basin of attraction (sampled evidence)";
}

int cmd_report(const std::string& from, const std::string& out_path, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(from)) {
    err << "report: no such directory: " << from << '\n';
    return kSpecError;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(from))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<std::pair<std::string, json>> gains, certs, ensembles;
  for (const auto& p : files) {
    std::ifstream in(p);
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("kind")) continue;
    const std::string rel = fs::relative(p, from).generic_string();
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "gain_analysis") gains.emplace_back(rel, j);
    else if (kind == "certificate") certs.emplace_back(rel, j);
    else if (kind == "ensemble") ensembles.emplace_back(rel, j);
  }
  if (gains.empty() && certs.empty() && ensembles.empty()) {
    err << "report: no analysis, certificate or ensemble outputs in " << from << '\n';
    return kSpecError;
  }

  std::ostringstream md;
  std::string name;
  for (const auto* group : {&gains, &certs, &ensembles})
    if (!group->empty() && name.empty()) name = group->front().second.value("spec", std::string());
  md << "# Stability report: " << name << "\n\n";

  md << "## Gain analysis\n\n";
  if (gains.empty()) md << "gain analysis: not run\n\n";
  for (const auto& [file, g] : gains) {
    md << "Source: `" << file << "`\n\n";
    md << "| s interval | small-gain condition |\n|---|---|\n";
    for (const auto& iv : g["sgc_intervals"])
      md << "| [" << fmt(iv["lo"]) << ", " << fmt(iv["hi"]) << "] | " << fmt(iv["verdict"]) << " |\n";
    md << "\n- sup gamma(delta(s)): " << fmt(g["sup_composed_gain"]) << " (reference " << fmt(g["reference_sup"])
       << ", discrepancy " << fmt(g["discrepancy"]) << ")\n";
    md << "- bilimit worst ratios: small " << fmt(g["bilimit_ratios"]["worst_small"]) << ", large "
       << fmt(g["bilimit_ratios"]["worst_large"]) << "\n";
    const fs::path stem = fs::path(file).parent_path() / (fs::path(file).stem().string() + "_composed.csv");
    md << "- composed gain curve: `" << stem.generic_string() << "`\n\n";
  }

  md << "## Certification\n\n";
  if (certs.empty()) md << "certification: not run\n\n";
  std::optional<std::string> strongest;
  for (const auto& [file, c] : certs) {
    md << "### Mode " << fmt(c["mode"]) << ": " << fmt(c["verdict"]) << "\n\nSource: `" << file << "`\n\n";
    for (const auto& [regime, r] : c["regimes"].items()) {
      const json& t = r["thresholds"];
      md << "Regime " << regime << " (" << fmt(r["verdict"]) << "): M_lo " << fmt(t["M_lo"]) << ", M_hi "
         << fmt(t["M_hi"]) << ", N_lo " << fmt(t["N_lo"]) << ", N_hi " << fmt(t["N_hi"]) << ", M_tilde "
         << fmt(t["M_tilde"]) << ", M_hat " << fmt(t["M_hat"]) << "\n\n";
      md << "| check | verdict | samples | worst margin |\n|---|---|---|---|\n";
      for (const auto& k : r["checks"])
        md << "| " << fmt(k["name"]) << " | " << fmt(k["verdict"]) << " | " << fmt(k["n_samples"]) << " | "
           << fmt(k["worst_margin"]) << " |\n";
      md << '\n';
    }
    if (!c["region_checks"].empty()) {
      md << "| region check | verdict | samples | worst margin |\n|---|---|---|---|\n";
      for (const auto& k : c["region_checks"])
        md << "| " << fmt(k["name"]) << " | " << fmt(k["verdict"]) << " | " << fmt(k["n_samples"]) << " | "
           << fmt(k["worst_margin"]) << " |\n";
      md << '\n';
      for (const auto& k : c["region_checks"])
        if (k.contains("details") && k["details"].contains("curves"))
          for (const auto& f : k["details"]["curves"])
            md << "- level curve: `" << (fs::path(file).parent_path() / f.get<std::string>()).generic_string()
               << "`\n";
    }
    if (c["verdict"] == "certified") {
      const std::string m = c["mode"];
      static const std::map<std::string, int> rank = {{"local", 0}, {"global", 1}, {"almost-global", 2}, {"planar", 3}};
      if (!strongest || rank.at(m) > rank.at(*strongest)) strongest = m;
    }
  }

  md << "## Simulation\n\n";
  if (ensembles.empty()) md << "simulation: not run\n\n";
  bool ensembles_clean = !ensembles.empty();
  for (const auto& [file, e] : ensembles) {
    const auto n = e["n_init"].get<std::size_t>();
    const auto conv = e["converged_count"].get<std::size_t>();
    const auto rec = e.value("recurrent_count", std::size_t{0});
    md << "Source: `" << file << "`\n\n";
    md << "- initial conditions: " << n << ", T = " << fmt(e["T"]) << "\n";
    md << "- converged (|Y(T)| < 1e-3): " << conv << "/" << n << "\n";
    md << "- blow-ups: " << fmt(e["blow_ups"]) << "\n";
    md << "- max terminal U: " << fmt(e["max_terminal_U"]) << "\n";
    md << "- recurrent trajectories in the gap region: " << rec
       << (e.value("recurrence_checked", false) ? "" : " (not checked)") << "\n";
    if (!e["trajectories"].empty())
      md << "- trajectories: `" << (fs::path(file).parent_path() / "traj_*.csv").generic_string() << "`\n";
    md << '\n';
    if (conv != n || rec != 0) ensembles_clean = false;
  }

  md << "## Conclusion\n\n";
  if (!strongest) {
    md << "No certificate was obtained.\n";
  } else {
    std::string verdict = conclusion_for(*strongest);
    if (*strongest == "planar" && !ensembles_clean) verdict = "hypotheses certified; simulation evidence incomplete";
    md << "Verdict: " << verdict << "\n";
  }

  const fs::path path(out_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream o(path);
  o << md.str();
  out << "wrote " << out_path << '\n';
  return kCertified;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Region-dependent small-gain stability certification", "region-gain"};
  app.require_subcommand(1);

  GainFlags gf;
  auto add_gain_flags = [&](CLI::App* c) {
    c->add_option("--gamma-factor", gf.gamma_factor, "Override the gamma gain factor");
    c->add_option("--delta-factor", gf.delta_factor, "Override the delta gain factor");
  };

  std::string spec_path, out_path, mode = "local", out_dir = "simulation", from;
  std::vector<double> interval;
  bool auto_thr = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> samples;
  std::size_t inits = 100;
  std::optional<double> T, dt;

  auto* analyze = app.add_subcommand("analyze-gains", "Small-gain scan, composed-gain supremum, bilimit ratios");
  analyze->add_option("spec", spec_path, "Spec file or builtin:NAME")->required();
  analyze->add_option("--interval", interval, "Scan interval a b")->expected(2);
  analyze->add_option("--out", out_path, "Report path")->default_val("gain_analysis.json");
  add_gain_flags(analyze);

  auto* cert = app.add_subcommand("certify", "Run the certification pipeline");
  cert->add_option("spec", spec_path, "Spec file or builtin:NAME")->required();
  cert->add_option("--mode", mode, "local, global, almost-global or planar")
      ->check(CLI::IsMember({"local", "global", "almost-global", "planar"}));
  cert->add_option("--out", out_path, "Certificate path")->default_val("certificate.json");
  cert->add_flag("--auto", auto_thr, "Search thresholds from the small-gain scan");
  cert->add_option("--seed", seed, "Sampling seed");
  cert->add_option("--samples", samples, "Samples per check");
  add_gain_flags(cert);

  auto* sim = app.add_subcommand("simulate", "Integrate an ensemble of trajectories");
  sim->add_option("spec", spec_path, "Spec file or builtin:NAME")->required();
  sim->add_option("--inits", inits, "Number of initial conditions")->default_val(100);
  sim->add_option("--T", T, "Final time");
  sim->add_option("--dt", dt, "Step size");
  sim->add_option("--seed", seed, "Seed for initial conditions");
  sim->add_option("--out-dir", out_dir, "Output directory")->default_val("simulation");
  add_gain_flags(sim);

  auto* rep = app.add_subcommand("report", "Render a Markdown report from prior outputs");
  rep->add_option("--from", from, "Directory with prior outputs")->required();
  rep->add_option("--out", out_path, "Report path")->default_val("report.md");

  auto* list = app.add_subcommand("list-builtins", "List built-in specifications");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kSpecError;
  }

  try {
    if (*analyze) return cmd_analyze_gains(spec_path, gf, interval, out_path, out);
    if (*cert) return cmd_certify(spec_path, gf, mode, auto_thr, seed, samples, out_path, out);
    if (*sim) return cmd_simulate(spec_path, gf, inits, T, dt, seed, out_dir, out);
    if (*rep) return cmd_report(from, out_path, out, err);
    if (*list) {
      for (const auto& n : builtin_names()) out << n << '\n';
      return 0;
    }
  } catch (const SpecError& e) {
    err << "spec error: " << e.what() << '\n';
    return kSpecError;
  } catch (const expr::ParseError& e) {
    err << "spec error: " << e.what() << '\n';
    return kSpecError;
  } catch (const PrerequisiteError& e) {
    err << "prerequisite: " << e.what() << '\n';
    return kPrerequisite;
  } catch (const EvaluationError& e) {
    err << "evaluation error: " << e.what() << '\n';
    return kEvalError;
  } catch (const expr::EvalError& e) {
    err << "evaluation error: " << e.what() << '\n';
    return kEvalError;
  }
  return kSpecError;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace region_gain::cli
