#pragma once

// Capacity and equilibrium measures, balayage by energy-norm projection,
// truncation (mass-deficit) studies, and thinness-at-infinity diagnostics
// for rotation bodies.

#include "condenser/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace condenser {

struct CapacityResult {
  double capacity = 0.0;
  VectorMeasure unit_minimizer;       // total mass 1
  Vector equilibrium;                 // gamma = capacity * minimizer, per node
  Vector equilibrium_potential;       // kappa(., gamma) at plate nodes
  double gamma_norm_sq = 0.0;         // ||gamma||^2_K
  double min_potential = 0.0;
  bool converged = false;
  int iterations = 0;
};

// c = 1 / min { nu^T K nu : nu >= 0, total mass 1 } on a single plate with
// g identically 1. Caps and fields on the input plate are ignored.
inline CapacityResult capacity(const Plate& plate, const Kernel& k,
                               const SolveOptions& opts = {}) {
  for (int j = 0; j < plate.size(); ++j)
    if (plate.g[j] != 1.0)
      throw std::invalid_argument("capacity: requires g identically 1 on the plate");

  Plate clean = plate;
  clean.sign = +1;
  clean.f = Vector::Zero(plate.size());
  clean.cap.reset();
  clean.a = 1.0;
  const Condenser c({clean}, static_cast<int>(plate.nodes.cols()));
  const KernelMatrix km = assemble_kernel_matrix(k, c);
  const Problem prob{c, km, ExternalField::from_plates(c)};
  const SolveReport rep = solve(prob, opts);

  const double e = rep.weighted_energy;
  if (!(e > 0.0) || !std::isfinite(e))
    throw std::runtime_error("capacity: minimum energy is not positive");

  CapacityResult res;
  res.capacity = 1.0 / e;
  res.unit_minimizer = rep.minimizer;
  res.equilibrium = res.capacity * rep.minimizer.plate_masses[0];
  const Vector pot = km.entries * (res.capacity * r_map(rep.minimizer, c));
  res.equilibrium_potential.resize(plate.size());
  for (int j = 0; j < plate.size(); ++j) res.equilibrium_potential[j] = pot[c.position_of(0, j)];
  res.gamma_norm_sq = res.capacity * res.capacity * e;
  res.min_potential = res.equilibrium_potential.minCoeff();
  res.converged = rep.converged;
  res.iterations = rep.iterations;
  return res;
}

struct SweepResult {
  Vector swept;                  // theta over target positions
  Matrix target_positions;       // coordinates matching `swept`
  double swept_mass = 0.0;
  double original_mass = 0.0;
  Vector source_potential_on_target;  // kappa(., nu) at target positions
  Vector swept_potential_on_target;   // kappa(., theta) at target positions
  double norm_swept_sq = 0.0;         // ||theta||^2_K
  double norm_source_sq = 0.0;        // ||nu||^2_K, +inf without source radii
  bool converged = false;
  int iterations = 0;
};

namespace detail {

// Bounded power iteration for the top eigenvalue of a PSD matrix; never
// throws, slight overestimation bias for step-size safety.
inline double psd_top_estimate(const Matrix& m) {
  std::mt19937 gen(0x70b5u);
  std::normal_distribution<double> normal;
  Vector v(m.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(gen);
  v.normalize();
  double rayleigh = 0.0;
  for (int it = 0; it < 300; ++it) {
    Vector w = m * v;
    const double nw = w.norm();
    if (nw == 0.0) return 1.0;
    const double next = v.dot(w);
    v = w / nw;
    if (std::abs(next - rayleigh) <= 1e-12 * std::max(1.0, std::abs(next))) {
      rayleigh = next;
      break;
    }
    rayleigh = next;
  }
  return std::max(1.05 * rayleigh, 1e-300);
}

}  // namespace detail

// Balayage of nonnegative point masses onto a plate: the energy-norm
// projection onto {theta >= 0 on target nodes} (no mass constraint),
// computed by projected gradient on ||nu - theta||^2_K.
inline SweepResult sweep(const Matrix& source_points, const Vector& source_masses,
                         const Plate& target, const Kernel& k, const SolveOptions& opts = {},
                         const Vector& source_radii = Vector()) {
  if (source_points.rows() != source_masses.size())
    throw std::invalid_argument("sweep: source point and mass counts differ");
  if (source_masses.minCoeff() < 0.0)
    throw std::invalid_argument("sweep: source masses must be nonnegative");
  for (Eigen::Index p = 0; p < source_points.rows(); ++p) {
    if (source_masses[p] == 0.0) continue;
    if (p < source_radii.size() && source_radii[p] > 0.0) continue;
    for (int j = 0; j < target.size(); ++j)
      if ((source_points.row(p) - target.nodes.row(j)).norm() == 0.0)
        throw InfeasibleProblemError(
            "sweep: a source point without a self-interaction radius sits on the target plate");
  }

  Plate clean = target;
  clean.sign = +1;
  clean.f = Vector::Zero(target.size());
  clean.cap.reset();
  clean.g = Vector::Ones(target.size());
  clean.a = 1.0;
  const Condenser c({clean}, static_cast<int>(target.nodes.cols()));
  const KernelMatrix km = assemble_kernel_matrix(k, c);
  const Matrix& pts = c.position_points();
  const Eigen::Index m = pts.rows();

  const Vector b = potential(k, source_points, source_masses, pts, source_radii);
  const double tau0 = 1.0 / detail::psd_top_estimate(km.entries);

  Vector theta = Vector::Zero(m);
  Vector k_theta = Vector::Zero(m);
  double objective = 0.0;  // theta^T K theta - 2 b^T theta
  bool converged = false;
  int iterations = 0;
  for (int it = 1; it <= opts.max_iters; ++it) {
    const Vector grad = k_theta - b;
    double tau = tau0;
    Vector cand, k_cand;
    double obj_cand = 0.0;
    bool accepted = false;
    for (int halve = 0; halve < 50 && !accepted; ++halve) {
      cand = (theta - tau * grad).cwiseMax(0.0);
      k_cand = km.entries * cand;
      obj_cand = cand.dot(k_cand) - 2.0 * b.dot(cand);
      if (obj_cand <= objective + 1e-13 * (1.0 + std::abs(objective)))
        accepted = true;
      else
        tau *= 0.5;
    }
    if (!accepted) {
      converged = true;
      break;
    }
    const Vector d = cand - theta;
    const double movement = std::sqrt(std::max(0.0, d.dot(km.entries * d)));
    theta = std::move(cand);
    k_theta = std::move(k_cand);
    objective = obj_cand;
    iterations = it;
    if (movement <= opts.tol) {
      converged = true;
      break;
    }
  }

  SweepResult res;
  res.swept = theta;
  res.target_positions = pts;
  res.swept_mass = theta.sum();
  res.original_mass = source_masses.sum();
  res.source_potential_on_target = b;
  res.swept_potential_on_target = k_theta;
  res.norm_swept_sq = theta.dot(k_theta);
  res.converged = converged;
  res.iterations = iterations;

  res.norm_source_sq = 0.0;
  for (Eigen::Index p = 0; p < source_points.rows(); ++p) {
    if (source_masses[p] == 0.0) continue;
    for (Eigen::Index q = 0; q < source_points.rows(); ++q) {
      if (source_masses[q] == 0.0) continue;
      double d = (source_points.row(p) - source_points.row(q)).norm();
      if (p == q) d = p < source_radii.size() ? source_radii[p] : 0.0;
      res.norm_source_sq += source_masses[p] * source_masses[q] * k.at_distance(d);
    }
  }
  return res;
}

struct MassDeficit {
  double swept_mass = 0.0;
  double original_mass = 0.0;
  SweepResult detail;
};

inline MassDeficit mass_deficit(const Matrix& source_points, const Vector& source_masses,
                                const Plate& target, const Kernel& k,
                                const SolveOptions& opts = {},
                                const Vector& source_radii = Vector()) {
  MassDeficit md;
  md.detail = sweep(source_points, source_masses, target, k, opts, source_radii);
  md.swept_mass = md.detail.swept_mass;
  md.original_mass = md.detail.original_mass;
  return md;
}

// Least-squares fit of a positive sequence against geometric decay C*r^k
// and power decay C*k^p over a window, with the decision rule: "summable"
// when the fitted ratio < 0.9, "divergent" when the fitted exponent > -1;
// if both fire, the model with the smaller residual decides; if neither,
// the window is inconclusive.
struct DecayFit {
  double ratio = 0.0;
  double exponent = 0.0;
  double rss_geometric = inf;
  double rss_power = inf;
  int window_lo = 0, window_hi = 0;
  bool usable = false;
  bool summable = false;
  bool divergent = false;
  bool conclusive = false;
};

inline DecayFit fit_decay(const std::vector<double>& terms, int k_lo, int k_hi) {
  DecayFit fit;
  fit.window_lo = k_lo;
  fit.window_hi = k_hi;
  std::vector<double> ks, logs;
  for (int k = k_lo; k <= k_hi && k < static_cast<int>(terms.size()); ++k)
    if (terms[k] > 0.0 && k >= 1) {
      ks.push_back(k);
      logs.push_back(std::log(terms[k]));
    }
  if (ks.size() < 2) return fit;
  fit.usable = true;

  auto least_squares = [&](auto&& abscissa) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(ks.size());
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double x = abscissa(ks[i]);
      sx += x;
      sy += logs[i];
      sxx += x * x;
      sxy += x * logs[i];
    }
    const double denom = n * sxx - sx * sx;
    const double slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
    const double icept = (sy - slope * sx) / n;
    double rss = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double r = logs[i] - (icept + slope * abscissa(ks[i]));
      rss += r * r;
    }
    return std::pair<double, double>{slope, rss};
  };

  auto [g_slope, g_rss] = least_squares([](double k) { return k; });
  auto [p_slope, p_rss] = least_squares([](double k) { return std::log(k); });
  fit.ratio = std::exp(g_slope);
  fit.exponent = p_slope;
  fit.rss_geometric = g_rss;
  fit.rss_power = p_rss;

  // The borderline tail 1/k is itself divergent, and finite-window fits of
  // exactly-harmonic terms land slightly below -1, so the divergence test
  // carries a margin rather than a strict cutoff.
  const bool says_summable = fit.ratio < 0.9;
  const bool says_divergent = fit.exponent > -1.0 - 0.15;
  if (says_summable && says_divergent) {
    if (fit.rss_power < fit.rss_geometric) fit.divergent = true;
    else fit.summable = true;
    fit.conclusive = true;
  } else if (says_summable || says_divergent) {
    fit.summable = says_summable;
    fit.divergent = says_divergent;
    fit.conclusive = true;
  }
  return fit;
}

struct ShellTerm {
  int k = 0;
  double capacity = 0.0;
  double wiener = 0.0;            // c(F_k) / q^{k(n-alpha)}
  double capacity_partial = 0.0;  // running sum of c(F_k)
  double wiener_partial = 0.0;    // running sum of wiener terms
  int nodes = 0;
  bool empty = false;
};

struct ThinnessDiagnosis {
  double q = 2.0;
  int k_max = 0;
  std::vector<ShellTerm> shells;
  DecayFit wiener_fit;
  DecayFit capacity_fit;
  double ratio_threshold = 0.9;
  double exponent_threshold = -1.0;
  std::string verdict;  // not-thin | thin-infinite-capacity | finite-capacity | inconclusive
  std::vector<std::string> warnings;
};

struct ThinnessOptions {
  int n_axial = 256;     // cap on axial stations per shell piece
  int n_angular = 8;     // angular nodes on the widest ring of each piece
  int scan_samples = 40000;
  SolveOptions solve{1e-7, 30000};
};

namespace detail {

inline Plate concat_plates(const std::vector<Plate>& parts) {
  int n = 0;
  for (const Plate& p : parts) n += p.size();
  Matrix nodes(n, 3);
  Vector weights(n), radii(n);
  int row = 0;
  for (const Plate& p : parts)
    for (int j = 0; j < p.size(); ++j, ++row) {
      nodes.row(row) = p.nodes.row(j);
      weights[row] = p.cell_weights[j];
      radii[row] = p.self_radius(j);
    }
  Plate out = make_plate(std::move(nodes), std::move(weights));
  out.self_radii = std::move(radii);
  return out;
}

}  // namespace detail

// Shell decomposition F_k = F intersect {q^k <= |x| < q^{k+1}} of a
// rotation body (distance from the origin, r(x1) = hypot(x1, rho(x1))),
// shell capacities, Wiener terms c(F_k)/q^{k(n-alpha)}, and a finite-horizon
// summability verdict fitted over k in [k_max/2, k_max].
inline ThinnessDiagnosis wiener_terms(const RotationProfile& profile, double q, int k_max,
                                      const Kernel& k, const ThinnessOptions& opts = {}) {
  profile.validate();
  k.validate();
  if (!(q > 1.0)) throw std::invalid_argument("wiener_terms: q must exceed 1");
  if (k_max < 2) throw std::invalid_argument("wiener_terms: k_max must be at least 2");
  if (k.family != KernelFamily::Riesz || k.n != 3)
    throw std::invalid_argument("wiener_terms: requires a Riesz kernel in dimension 3");

  ThinnessDiagnosis diag;
  diag.q = q;
  diag.k_max = k_max;

  const double x_top = std::pow(q, k_max + 1);
  double x_start = 0.0;
  if (profile.family == ProfileFamily::PowerLaw && profile.s > 0.0)
    x_start = 0.5 * std::pow(q, -(k_max + 1) / profile.s);

  // shell index of a point on the surface; -1 outside [1, q^{k_max+1})
  auto shell_of = [&](double x) {
    const double r = std::hypot(x, profile.radius(x));
    if (!(r >= 1.0) || !(r < x_top)) return -1;
    const int s = static_cast<int>(std::floor(std::log(r) / std::log(q)));
    return s <= k_max ? s : -1;
  };

  // dense scan with bisection-refined membership boundaries
  std::vector<std::vector<std::pair<double, double>>> intervals(k_max + 1);
  const int M = std::max(1000, opts.scan_samples);
  double prev_x = x_start;
  int prev_s = shell_of(prev_x);
  double open_at = prev_s >= 0 ? prev_x : 0.0;
  for (int i = 1; i <= M; ++i) {
    const double x = x_start + (x_top - x_start) * i / M;
    const int s = shell_of(x);
    if (s != prev_s) {
      double lo = prev_x, hi = x;
      for (int it = 0; it < 80 && hi - lo > 1e-12 * (1.0 + hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (shell_of(mid) == prev_s ? lo : hi) = mid;
      }
      const double boundary = 0.5 * (lo + hi);
      if (prev_s >= 0) intervals[prev_s].push_back({open_at, boundary});
      if (s >= 0) open_at = boundary;
      prev_s = s;
    }
    prev_x = x;
  }
  if (prev_s >= 0) intervals[prev_s].push_back({open_at, x_top});

  // shells are independent capacity problems; compute them concurrently and
  // merge in shell order so the output stays deterministic
  auto shell_term = [&](int shell) {
    std::pair<ShellTerm, std::string> out;
    ShellTerm& term = out.first;
    term.k = shell;
    // a shell tangent to the surface meets it in a circle; circles are polar
    // for alpha <= 2, so zero-length slivers carry no capacity and would only
    // ruin the conditioning of the shell solve
    std::vector<std::pair<double, double>> pieces;
    for (auto [lo, hi] : intervals[shell])
      if (hi - lo > 1e-9 * std::max(1.0, hi)) pieces.push_back({lo, hi});
    if (pieces.empty()) {
      term.empty = true;
      out.second = "shell " + std::to_string(shell) + " contains no nodes; term set to 0";
    } else {
      std::vector<Plate> parts;
      for (auto [lo, hi] : pieces)
        parts.push_back(build_profile_segment(profile, lo, hi, opts.n_axial, opts.n_angular));
      const Plate shell_plate = detail::concat_plates(parts);
      term.nodes = shell_plate.size();
      const CapacityResult cr = capacity(shell_plate, k, opts.solve);
      if (!cr.converged)
        out.second = "shell " + std::to_string(shell) + " capacity solve did not converge";
      term.capacity = cr.capacity;
    }
    term.wiener = term.capacity / std::pow(q, shell * (k.n - k.alpha));
    return out;
  };
  std::vector<std::future<std::pair<ShellTerm, std::string>>> jobs;
  for (int shell = 0; shell <= k_max; ++shell)
    jobs.push_back(std::async(std::launch::async, shell_term, shell));

  double cap_sum = 0.0, wiener_sum = 0.0;
  std::vector<double> cap_terms, wiener_series;
  for (auto& job : jobs) {
    auto [term, warning] = job.get();
    if (!warning.empty()) diag.warnings.push_back(warning);
    cap_sum += term.capacity;
    wiener_sum += term.wiener;
    term.capacity_partial = cap_sum;
    term.wiener_partial = wiener_sum;
    cap_terms.push_back(term.capacity);
    wiener_series.push_back(term.wiener);
    diag.shells.push_back(term);
  }

  const int window_lo = k_max / 2;
  diag.wiener_fit = fit_decay(wiener_series, window_lo, k_max);
  diag.capacity_fit = fit_decay(cap_terms, window_lo, k_max);

  const DecayFit& wf = diag.wiener_fit;
  const DecayFit& cf = diag.capacity_fit;
  if (!wf.usable || !wf.conclusive || !cf.usable || !cf.conclusive)
    diag.verdict = "inconclusive";
  else if (wf.divergent && cf.divergent)
    diag.verdict = "not-thin";
  else if (wf.summable && cf.divergent)
    diag.verdict = "thin-infinite-capacity";
  else if (wf.summable && cf.summable)
    diag.verdict = "finite-capacity";
  else
    diag.verdict = "inconclusive";
  return diag;
}

inline void write_thinness_csv(std::ostream& os, const ThinnessDiagnosis& diag) {
  os << "k,capacity,wiener_term,capacity_partial_sum,wiener_partial_sum\n";
  os.precision(17);
  for (const ShellTerm& t : diag.shells)
    os << t.k << ',' << t.capacity << ',' << t.wiener << ',' << t.capacity_partial << ','
       << t.wiener_partial << '\n';
}

inline void write_thinness_csv(const std::string& path, const ThinnessDiagnosis& diag) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_thinness_csv: cannot open " + path);
  write_thinness_csv(os, diag);
}

// Hypothesis summary for the two-plate solvability criterion: oppositely
// signed plates, g identically 1, f identically 0, unit mass targets, no
// caps, positive separation.
struct TwoPlateSummary {
  bool two_plates = false;
  bool opposite_signs = false;
  bool unit_g = false;
  bool zero_f = false;
  bool unit_a = false;
  bool unconstrained = false;
  double separation = 0.0;

  bool hypotheses_met() const {
    return two_plates && opposite_signs && unit_g && zero_f && unit_a && unconstrained &&
           separation > 0.0;
  }

  static TwoPlateSummary from(const Condenser& c) {
    TwoPlateSummary s;
    s.two_plates = c.plate_count() == 2;
    if (!s.two_plates) return s;
    const Plate& p0 = c.plates()[0];
    const Plate& p1 = c.plates()[1];
    s.opposite_signs = p0.sign * p1.sign == -1;
    s.unit_g = (p0.g.array() == 1.0).all() && (p1.g.array() == 1.0).all();
    s.zero_f = (p0.f.array() == 0.0).all() && (p1.f.array() == 0.0).all();
    s.unit_a = p0.a == 1.0 && p1.a == 1.0;
    s.unconstrained = !p0.cap && !p1.cap;
    double dmin = inf;
    for (int u = 0; u < p0.size(); ++u)
      for (int v = 0; v < p1.size(); ++v)
        dmin = std::min(dmin, (p0.nodes.row(u) - p1.nodes.row(v)).norm());
    s.separation = dmin;
    return s;
  }
};

struct SolvabilityVerdict {
  std::string verdict;  // solvable | unsolvable | inconclusive
  std::string reason;
};

// Solvable iff the unbounded plate has finite capacity or is not thin at
// infinity; the thin-but-infinite-capacity regime is the unsolvable one.
inline SolvabilityVerdict predict_solvability(const TwoPlateSummary& summary,
                                              const ThinnessDiagnosis& diag) {
  SolvabilityVerdict v;
  if (!summary.hypotheses_met()) {
    v.verdict = "inconclusive";
    v.reason = "hypotheses not met (need two oppositely signed unit-mass plates, g = 1, f = 0, "
               "no caps, positive separation)";
    return v;
  }
  if (diag.verdict == "finite-capacity") {
    v.verdict = "solvable";
    v.reason = "unbounded plate has finite capacity";
  } else if (diag.verdict == "not-thin") {
    v.verdict = "solvable";
    v.reason = "unbounded plate is not thin at infinity";
  } else if (diag.verdict == "thin-infinite-capacity") {
    v.verdict = "unsolvable";
    v.reason = "unbounded plate is thin at infinity with infinite capacity";
  } else {
    v.verdict = "inconclusive";
    v.reason = "thinness diagnosis inconclusive";
  }
  return v;
}

}  // namespace condenser
