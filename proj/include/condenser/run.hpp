#pragma once

// Batch pipelines behind the CLI subcommands. Each run writes a summary.json
// plus CSV data files into the output directory and returns the process exit
// code: 0 success, 2 infeasible problem, 3 nonconvergence (files are still
// written). Config errors surface as ConfigError before any files are
// touched and map to exit 1 in the front end.

#include "condenser/config.hpp"
#include "condenser/version.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace condenser {

namespace runs {

inline ordered_json base_summary(const RunConfig& cfg, const std::string& subcommand) {
  ordered_json s;
  s["tool"] = "condenser";
  s["version"] = library_version;
  s["subcommand"] = subcommand;
  s["config_hash"] = cfg.config_hash;
  s["seed"] = cfg.solver.seed;
  s["tol"] = cfg.solver.tol;
  s["max_iters"] = cfg.solver.max_iters;
  return s;
}

inline void write_summary(const std::filesystem::path& out_dir, const ordered_json& s) {
  std::ofstream os(out_dir / "summary.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + (out_dir / "summary.json").string());
  os << s.dump(2) << '\n';
}

inline double json_safe(double v) { return v; }  // nlohmann serializes non-finite as null

inline ordered_json kkt_to_json(const KktReport& rep) {
  ordered_json j;
  j["pass"] = rep.pass;
  j["tol"] = rep.tol;
  ordered_json plates = ordered_json::array();
  for (const PlateKkt& pk : rep.plates) {
    ordered_json p;
    p["plate"] = pk.plate;
    p["constrained"] = pk.constrained;
    p["multiplier"] = json_safe(pk.multiplier);
    p["degenerate"] = pk.degenerate;
    if (pk.constrained) {
      p["residual_b1"] = pk.b1;
      p["residual_b2"] = pk.b2;
    } else {
      p["residual_b3"] = pk.b3;
      p["residual_b4"] = pk.b4;
    }
    p["violating_nodes"] = pk.violating_nodes;
    p["pass"] = pk.pass;
    plates.push_back(std::move(p));
  }
  j["plates"] = std::move(plates);
  return j;
}

inline double default_kkt_tol(const VectorMeasure& mu, const Problem& p) {
  const auto W = weighted_potentials(mu, p.field, p.kernel_matrix, p.condenser);
  std::vector<Vector> wt;
  for (int i = 0; i < p.condenser.plate_count(); ++i)
    wt.push_back(W[i].cwiseQuotient(p.condenser.plates()[i].g));
  return 1e-5 * kkt_scale(wt);
}

inline Condenser checked_condenser(const RunConfig& cfg) {
  Condenser c = make_condenser(cfg);
  const ValidationReport rep = validate_condenser(c);
  if (!rep.valid) {
    const ValidationIssue& issue = rep.issues.front();
    const std::string field =
        issue.plate_a >= 0 ? "plates[" + std::to_string(issue.plate_a) + "]" : "plates";
    throw ConfigError(field, issue.message);
  }
  return c;
}

inline KernelMatrix checked_matrix(const RunConfig& cfg, const Condenser& c) {
  try {
    return assemble_kernel_matrix(cfg.kernel, c);
  } catch (const std::domain_error& e) {
    throw ConfigError("plates", e.what());
  }
}

}  // namespace runs

inline int run_solve(const RunConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ordered_json summary = runs::base_summary(cfg, "solve");

  const Condenser c = runs::checked_condenser(cfg);
  const KernelMatrix km = runs::checked_matrix(cfg, c);
  const ExternalField field = make_field(cfg, c);
  const Problem prob{c, km, field};

  SolveReport rep;
  try {
    rep = solve(prob, cfg.solver);
  } catch (const InfeasibleProblemError& e) {
    summary["error"] = e.what();
    summary["infeasible"] = true;
    runs::write_summary(out_dir, summary);
    return 2;
  }

  write_measure_csv((fs::path(out_dir) / "measure.csv").string(), rep.minimizer);
  write_trace_csv((fs::path(out_dir) / "trace.csv").string(), rep);

  ordered_json js;
  js["converged"] = rep.converged;
  js["iterations"] = rep.iterations;
  js["weighted_energy"] = rep.weighted_energy;
  js["step_base"] = rep.step_base;
  js["final_movement"] = rep.movement_trace.empty() ? 0.0 : rep.movement_trace.back();
  summary["solve"] = std::move(js);

  try {
    const KktReport kkt = kkt_verify(rep.minimizer, prob, runs::default_kkt_tol(rep.minimizer, prob));
    write_kkt_csv((fs::path(out_dir) / "kkt.csv").string(), kkt);
    summary["kkt"] = runs::kkt_to_json(kkt);
  } catch (const KktDiagnosticError& e) {
    summary["kkt"] = ordered_json{{"diagnostic", e.what()}};
  }

  ordered_json twin_section;
  if (const auto twin = find_requivalent_twin(rep.minimizer, c)) {
    const EquivalenceResult eq = equivalence_check(rep.minimizer, twin->twin, km, c);
    twin_section["found"] = true;
    twin_section["plate_a"] = twin->plate_a;
    twin_section["plate_b"] = twin->plate_b;
    twin_section["distance"] = eq.distance;
    twin_section["equivalent"] = eq.equivalent;
    twin_section["max_component_diff"] = twin->max_component_diff;
    twin_section["twin_weighted_energy"] = weighted_energy(twin->twin, field, km, c);
    write_measure_csv((fs::path(out_dir) / "measure_twin.csv").string(), twin->twin);
  } else {
    twin_section["found"] = false;
  }
  summary["requivalent_minimizers"] = std::move(twin_section);

  runs::write_summary(out_dir, summary);
  return rep.converged ? 0 : 3;
}

inline int run_capacity(const RunConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ordered_json summary = runs::base_summary(cfg, "capacity");
  if (cfg.plates.empty()) throw ConfigError("plates", "capacity requires one plate");

  CapacityResult res;
  try {
    res = capacity(cfg.plates[0], cfg.kernel, cfg.solver);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("plates[0]", e.what());
  } catch (const std::runtime_error& e) {
    summary["error"] = e.what();
    summary["infeasible"] = true;
    runs::write_summary(out_dir, summary);
    return 2;
  }

  {
    std::ofstream os(fs::path(out_dir) / "equilibrium.csv", std::ios::binary);
    os << "node_index,mass,potential\n";
    os.precision(17);
    for (Eigen::Index j = 0; j < res.equilibrium.size(); ++j)
      os << j << ',' << res.equilibrium[j] << ',' << res.equilibrium_potential[j] << '\n';
  }

  ordered_json jc;
  jc["capacity"] = res.capacity;
  jc["gamma_norm_sq"] = res.gamma_norm_sq;
  jc["min_potential"] = res.min_potential;
  jc["converged"] = res.converged;
  jc["iterations"] = res.iterations;
  summary["capacity"] = std::move(jc);
  runs::write_summary(out_dir, summary);
  return res.converged ? 0 : 3;
}

inline int run_thinness(const RunConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ordered_json summary = runs::base_summary(cfg, "thinness");

  if (!cfg.raw.contains("thinness")) throw ConfigError("thinness", "missing");
  const ordered_json& jt = cfg.raw.at("thinness");
  const RotationProfile prof = cfg::profile_from(cfg::require(jt, "thinness", "profile"),
                                                 "thinness.profile");
  const double q = cfg::number(cfg::require(jt, "thinness", "q"), "thinness.q");
  const int k_max = cfg::integer(cfg::require(jt, "thinness", "k_max"), "thinness.k_max");
  ThinnessOptions opts;
  opts.solve = cfg.solver;
  if (jt.contains("n_axial")) opts.n_axial = cfg::integer(jt.at("n_axial"), "thinness.n_axial");
  if (jt.contains("n_angular"))
    opts.n_angular = cfg::integer(jt.at("n_angular"), "thinness.n_angular");
  if (jt.contains("scan_samples"))
    opts.scan_samples = cfg::integer(jt.at("scan_samples"), "thinness.scan_samples");

  ThinnessDiagnosis diag;
  try {
    diag = wiener_terms(prof, q, k_max, cfg.kernel, opts);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("thinness", e.what());
  }

  write_thinness_csv((fs::path(out_dir) / "thinness.csv").string(), diag);

  ordered_json jd;
  jd["verdict"] = diag.verdict;
  jd["q"] = diag.q;
  jd["k_max"] = diag.k_max;
  auto fit_json = [](const DecayFit& f) {
    ordered_json j;
    j["usable"] = f.usable;
    j["ratio"] = f.ratio;
    j["exponent"] = f.exponent;
    j["rss_geometric"] = f.rss_geometric;
    j["rss_power"] = f.rss_power;
    j["window"] = {f.window_lo, f.window_hi};
    j["summable"] = f.summable;
    j["divergent"] = f.divergent;
    j["conclusive"] = f.conclusive;
    return j;
  };
  jd["wiener_fit"] = fit_json(diag.wiener_fit);
  jd["capacity_fit"] = fit_json(diag.capacity_fit);
  jd["ratio_threshold"] = diag.ratio_threshold;
  jd["exponent_threshold"] = diag.exponent_threshold;
  jd["warnings"] = diag.warnings;
  ordered_json shells = ordered_json::array();
  for (const ShellTerm& t : diag.shells)
    shells.push_back(ordered_json{{"k", t.k},
                                  {"capacity", t.capacity},
                                  {"wiener_term", t.wiener},
                                  {"capacity_partial_sum", t.capacity_partial},
                                  {"wiener_partial_sum", t.wiener_partial},
                                  {"nodes", t.nodes},
                                  {"empty", t.empty}});
  jd["shells"] = std::move(shells);
  summary["thinness"] = std::move(jd);

  if (cfg.plates.size() == 2) {
    const Condenser c = runs::checked_condenser(cfg);
    const SolvabilityVerdict v = predict_solvability(TwoPlateSummary::from(c), diag);
    summary["solvability"] = ordered_json{{"verdict", v.verdict}, {"reason", v.reason}};
  }

  runs::write_summary(out_dir, summary);
  for (const std::string& w : diag.warnings)
    if (w.find("did not converge") != std::string::npos) return 3;
  return 0;
}

inline int run_sweep(const RunConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ordered_json summary = runs::base_summary(cfg, "sweep");

  if (cfg.plates.empty()) throw ConfigError("plates", "sweep requires a target plate");
  if (!cfg.raw.contains("sweep")) throw ConfigError("sweep", "missing");
  const ordered_json& js = cfg.raw.at("sweep");
  const ordered_json& jsrc = cfg::require(js, "sweep", "source");
  const Matrix points = cfg::point_matrix(cfg::require(jsrc, "sweep.source", "points"),
                                          "sweep.source.points", cfg.dimension);
  Vector masses = cfg::number_array(cfg::require(jsrc, "sweep.source", "masses"),
                                    "sweep.source.masses");
  if (masses.size() != points.rows())
    throw ConfigError("sweep.source.masses", "length does not match points");
  Vector radii;
  if (jsrc.contains("radii")) {
    radii = cfg::number_array(jsrc.at("radii"), "sweep.source.radii");
    if (radii.size() != points.rows())
      throw ConfigError("sweep.source.radii", "length does not match points");
  }

  MassDeficit md;
  try {
    md = mass_deficit(points, masses, cfg.plates[0], cfg.kernel, cfg.solver, radii);
  } catch (const InfeasibleProblemError& e) {
    summary["error"] = e.what();
    summary["infeasible"] = true;
    runs::write_summary(out_dir, summary);
    return 2;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("sweep.source", e.what());
  }

  const SweepResult& sw = md.detail;
  {
    std::ofstream os(fs::path(out_dir) / "swept.csv", std::ios::binary);
    os << "position_index";
    for (int d = 0; d < cfg.dimension; ++d) os << ",x" << d + 1;
    os << ",mass,source_potential,swept_potential\n";
    os.precision(17);
    for (Eigen::Index p = 0; p < sw.swept.size(); ++p) {
      os << p;
      for (int d = 0; d < cfg.dimension; ++d) os << ',' << sw.target_positions(p, d);
      os << ',' << sw.swept[p] << ',' << sw.source_potential_on_target[p] << ','
         << sw.swept_potential_on_target[p] << '\n';
    }
  }

  ordered_json jw;
  jw["swept_mass"] = sw.swept_mass;
  jw["original_mass"] = sw.original_mass;
  jw["mass_ratio"] = sw.original_mass > 0.0 ? sw.swept_mass / sw.original_mass : 0.0;
  jw["norm_swept_sq"] = sw.norm_swept_sq;
  if (std::isfinite(sw.norm_source_sq)) jw["norm_source_sq"] = sw.norm_source_sq;
  else jw["norm_source_sq"] = "inf";
  jw["converged"] = sw.converged;
  jw["iterations"] = sw.iterations;
  summary["sweep"] = std::move(jw);
  runs::write_summary(out_dir, summary);
  return sw.converged ? 0 : 3;
}

inline int run_verify(const RunConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ordered_json summary = runs::base_summary(cfg, "verify");

  if (!cfg.raw.contains("verify")) throw ConfigError("verify", "missing");
  const ordered_json& jv = cfg.raw.at("verify");
  const std::string csv_path = cfg::text(cfg::require(jv, "verify", "measure_csv"),
                                         "verify.measure_csv");

  const Condenser c = runs::checked_condenser(cfg);
  const KernelMatrix km = runs::checked_matrix(cfg, c);
  const ExternalField field = make_field(cfg, c);
  const Problem prob{c, km, field};

  VectorMeasure mu;
  try {
    mu = read_measure_csv(csv_path, c);
  } catch (const std::runtime_error& e) {
    throw ConfigError("verify.measure_csv", e.what());
  }

  ordered_json jr;
  jr["admissible"] = is_admissible(mu, c, 1e-10);
  jr["normalized"] = is_normalized(mu, c);
  double tol = jv.contains("kkt_tol") ? cfg::number(jv.at("kkt_tol"), "verify.kkt_tol")
                                      : runs::default_kkt_tol(mu, prob);
  try {
    const KktReport kkt = kkt_verify(mu, prob, tol);
    write_kkt_csv((fs::path(out_dir) / "kkt.csv").string(), kkt);
    jr["kkt"] = runs::kkt_to_json(kkt);
    jr["pass"] = kkt.pass;
  } catch (const KktDiagnosticError& e) {
    jr["kkt"] = ordered_json{{"diagnostic", e.what()}};
    jr["pass"] = false;
  }
  try {
    jr["weighted_energy"] = weighted_energy(mu, field, km, c);
  } catch (const InfeasibleSupportError& e) {
    jr["weighted_energy"] = "infeasible";
    jr["infeasible_support"] = e.what();
  }
  summary["verify"] = std::move(jr);
  runs::write_summary(out_dir, summary);
  return 0;
}

}  // namespace condenser
