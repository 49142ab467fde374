#pragma once

// Weighted potentials and the variational characterization of minimizers:
// multiplier recovery, the (b1)-(b4) node conditions, the variational
// inequality, and R-equivalence utilities.

#include "condenser/solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace condenser {

// W^i[j] = s_i * kappa(node_ij, R lambda) + f_i[j]; entries may be +inf
// where the field is.
inline std::vector<Vector> weighted_potentials(const VectorMeasure& lambda,
                                               const ExternalField& F, const KernelMatrix& km,
                                               const Condenser& c) {
  const Vector pot = km.entries * r_map(lambda, c);
  const auto f = field_samples(F, km, c);
  std::vector<Vector> W;
  for (int i = 0; i < c.plate_count(); ++i) {
    const double s = c.plates()[i].sign;
    Vector wi(c.plates()[i].size());
    for (int j = 0; j < wi.size(); ++j) wi[j] = s * pot[c.position_of(i, j)] + f[i][j];
    W.push_back(std::move(wi));
  }
  return W;
}

struct KktDiagnosticError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PlateKkt {
  int plate = -1;
  bool constrained = false;
  double multiplier = 0.0;
  // Constrained plate whose mass sits entirely at 0 or cap: the multiplier
  // is the midpoint of its admissible interval rather than a free-node
  // median.
  bool degenerate = false;
  double b1 = 0.0, b2 = 0.0, b3 = 0.0, b4 = 0.0;  // residuals of the applicable pair
  std::vector<int> violating_nodes;
  bool pass = true;
  Vector wtilde;  // W/g per node
  Vector mass;
};

struct KktReport {
  std::vector<PlateKkt> plates;
  double tol = 0.0;
  bool pass = true;
};

// Shared convention for turning relative tolerances into absolute ones: the
// magnitude of the g-normalized potentials, floored at 1.
inline double kkt_scale(const std::vector<Vector>& wtilde) {
  double s = 1.0;
  for (const Vector& w : wtilde)
    for (Eigen::Index j = 0; j < w.size(); ++j)
      if (std::isfinite(w[j])) s = std::max(s, std::abs(w[j]));
  return s;
}

// Node conditions of the minimizer characterization. Unconstrained plate:
// w = <W, lambda^i>/a_i, then W/g >= w - tol everywhere (b3) and = w on
// mass-carrying nodes (b4). Constrained plate: w = median of W/g over free
// nodes, then W/g >= w - tol off the cap (b1) and <= w + tol on mass (b2).
// "Mass-carrying" means above mass_floor = 1e-12 * a_i.
inline KktReport kkt_verify(const VectorMeasure& lambda, const Problem& p, double tol) {
  const Condenser& c = p.condenser;
  require_conformant(lambda, c);
  const auto W = weighted_potentials(lambda, p.field, p.kernel_matrix, c);
  KktReport rep;
  rep.tol = tol;

  for (int i = 0; i < c.plate_count(); ++i) {
    const Plate& pl = c.plates()[i];
    const Vector& li = lambda.plate_masses[i];
    const double floor = 1e-12 * pl.a;
    PlateKkt pk;
    pk.plate = i;
    pk.constrained = pl.constrained();
    pk.mass = li;
    pk.wtilde = W[i].cwiseQuotient(pl.g);

    auto violated = [&](int j) { pk.violating_nodes.push_back(j); };

    if (!pk.constrained) {
      double dot = 0.0;
      for (int j = 0; j < pl.size(); ++j)
        if (li[j] != 0.0) dot += W[i][j] * li[j];
      pk.multiplier = dot / pl.a;
      for (int j = 0; j < pl.size(); ++j) {
        const double r3 = pk.multiplier - pk.wtilde[j];
        if (r3 > pk.b3) pk.b3 = r3;
        if (li[j] > floor) {
          const double r4 = std::abs(pk.wtilde[j] - pk.multiplier);
          if (r4 > pk.b4) pk.b4 = r4;
          if (r4 > tol) violated(j);
        }
        if (r3 > tol) violated(j);
      }
      pk.pass = pk.b3 <= tol && pk.b4 <= tol;
    } else {
      const Vector& cap = *pl.cap;
      std::vector<double> free_vals;
      bool any_mass = false;
      for (int j = 0; j < pl.size(); ++j) {
        const bool has_mass = li[j] > floor;
        const bool below_cap = cap[j] - li[j] > floor;
        any_mass = any_mass || has_mass;
        if (has_mass && below_cap) free_vals.push_back(pk.wtilde[j]);
      }
      if (free_vals.empty()) {
        if (!any_mass)
          throw KktDiagnosticError("kkt_verify: plate " + std::to_string(i) +
                                   " has no free nodes and carries no mass");
        pk.degenerate = true;
        double lower = -inf, upper = inf;
        for (int j = 0; j < pl.size(); ++j) {
          if (li[j] > floor) lower = std::max(lower, pk.wtilde[j]);
          if (cap[j] - li[j] > floor) upper = std::min(upper, pk.wtilde[j]);
        }
        pk.multiplier = std::isfinite(upper) ? 0.5 * (lower + upper) : lower;
      } else {
        std::sort(free_vals.begin(), free_vals.end());
        const std::size_t h = free_vals.size() / 2;
        pk.multiplier = free_vals.size() % 2 ? free_vals[h]
                                             : 0.5 * (free_vals[h - 1] + free_vals[h]);
      }
      for (int j = 0; j < pl.size(); ++j) {
        bool bad = false;
        if (cap[j] - li[j] > floor) {
          const double r1 = pk.multiplier - pk.wtilde[j];
          if (r1 > pk.b1) pk.b1 = r1;
          bad = bad || r1 > tol;
        }
        if (li[j] > floor) {
          const double r2 = pk.wtilde[j] - pk.multiplier;
          if (r2 > pk.b2) pk.b2 = r2;
          bad = bad || r2 > tol;
        }
        if (bad) violated(j);
      }
      pk.pass = pk.b1 <= tol && pk.b2 <= tol;
    }
    rep.pass = rep.pass && pk.pass;
    rep.plates.push_back(std::move(pk));
  }
  return rep;
}

inline void write_kkt_csv(std::ostream& os, const KktReport& rep) {
  os << "plate_index,node_index,mass,wtilde,multiplier,residual\n";
  os.precision(17);
  for (const PlateKkt& pk : rep.plates)
    for (Eigen::Index j = 0; j < pk.wtilde.size(); ++j)
      os << pk.plate << ',' << j << ',' << pk.mass[j] << ',' << pk.wtilde[j] << ','
         << pk.multiplier << ',' << pk.wtilde[j] - pk.multiplier << '\n';
}

inline void write_kkt_csv(const std::string& path, const KktReport& rep) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_kkt_csv: cannot open " + path);
  write_kkt_csv(os, rep);
}

// sum_i <W^{lambda,i}, nu^i - lambda^i>; nonnegative at a minimizer lambda
// for every feasible nu. Mass moved onto an f = +inf node dominates the sum.
inline double variational_inequality_check(const VectorMeasure& lambda, const VectorMeasure& nu,
                                           const Problem& p) {
  const Condenser& c = p.condenser;
  require_conformant(lambda, c);
  require_conformant(nu, c);
  const auto W = weighted_potentials(lambda, p.field, p.kernel_matrix, c);
  double acc = 0.0;
  for (int i = 0; i < c.plate_count(); ++i)
    for (int j = 0; j < c.plates()[i].size(); ++j) {
      const double d = nu.plate_masses[i][j] - lambda.plate_masses[i][j];
      if (d == 0.0) continue;
      if (W[i][j] == inf) return d > 0.0 ? inf : -inf;
      acc += W[i][j] * d;
    }
  return acc;
}

struct EquivalenceResult {
  bool equivalent = false;
  double distance = 0.0;
  double scale = 0.0;  // larger of the two energy norms
};

// Measures are equivalent when their R-images coincide in the energy
// seminorm, up to tol times the larger energy norm.
inline EquivalenceResult equivalence_check(const VectorMeasure& m1, const VectorMeasure& m2,
                                           const KernelMatrix& km, const Condenser& c,
                                           double tol = 1e-7) {
  EquivalenceResult res;
  res.distance = semimetric_distance(m1, m2, km, c);
  res.scale = std::max(std::sqrt(std::max(0.0, energy(m1, km, c))),
                       std::sqrt(std::max(0.0, energy(m2, km, c))));
  res.equivalent = res.distance <= tol * res.scale || res.scale == 0.0;
  return res;
}

struct RequivalentTwin {
  VectorMeasure twin;
  double max_component_diff = 0.0;
  int plate_a = -1, plate_b = -1;
};

// Searches equally-signed plate pairs sharing positions for a mass transfer
// nu with <g, nu> = 0 on both plates, producing (lambda^a - nu, lambda^b +
// nu): a distinct admissible measure with the identical R-image.
inline std::optional<RequivalentTwin> find_requivalent_twin(const VectorMeasure& lambda,
                                                            const Condenser& c) {
  require_conformant(lambda, c);
  const int P = c.plate_count();
  for (int a = 0; a < P; ++a)
    for (int b = a + 1; b < P; ++b) {
      const Plate& pa = c.plates()[a];
      const Plate& pb = c.plates()[b];
      if (pa.sign != pb.sign) continue;
      std::vector<int> node_a(c.position_count(), -1), node_b(c.position_count(), -1);
      for (int j = 0; j < pa.size(); ++j)
        if (node_a[c.position_of(a, j)] < 0) node_a[c.position_of(a, j)] = j;
      for (int j = 0; j < pb.size(); ++j)
        if (node_b[c.position_of(b, j)] < 0) node_b[c.position_of(b, j)] = j;
      std::vector<int> shared;
      for (int q = 0; q < c.position_count(); ++q)
        if (node_a[q] >= 0 && node_b[q] >= 0) shared.push_back(q);
      if (shared.size() < 2) continue;

      // per shared position: mass the transfer can drain here (a loses,
      // b gains) and absorb here (a gains, b loses)
      auto room = [](const Plate& p, int j, double m) {
        return p.cap ? (*p.cap)[j] - m : inf;
      };
      std::vector<double> drain(shared.size()), absorb(shared.size());
      for (std::size_t t = 0; t < shared.size(); ++t) {
        const int ja = node_a[shared[t]], jb = node_b[shared[t]];
        drain[t] = std::min(lambda.plate_masses[a][ja], room(pb, jb, lambda.plate_masses[b][jb]));
        absorb[t] = std::min(lambda.plate_masses[b][jb], room(pa, ja, lambda.plate_masses[a][ja]));
      }
      int q1 = -1, q2 = -1;
      double best = 0.0;
      for (std::size_t t1 = 0; t1 < shared.size(); ++t1)
        for (std::size_t t2 = 0; t2 < shared.size(); ++t2) {
          if (t1 == t2) continue;
          const int ja1 = node_a[shared[t1]], ja2 = node_a[shared[t2]];
          const int jb1 = node_b[shared[t1]], jb2 = node_b[shared[t2]];
          // <g, nu> = 0 on both plates needs matching g-ratios at both sites
          const double ga1 = pa.g[ja1], ga2 = pa.g[ja2];
          if (std::abs(ga1 * pb.g[jb2] - ga2 * pb.g[jb1]) > 1e-12 * std::abs(ga1 * pb.g[jb2]))
            continue;
          const double m1 = std::min(drain[t1], absorb[t2] * ga2 / ga1);
          if (m1 > best) {
            best = m1;
            q1 = shared[t1];
            q2 = shared[t2];
          }
        }
      if (!(best > 0.0)) continue;

      const int ja1 = node_a[q1], jb1 = node_b[q1], ja2 = node_a[q2], jb2 = node_b[q2];
      const double m1 = best;
      const double m2 = m1 * pa.g[ja1] / pa.g[ja2];

      RequivalentTwin tw;
      tw.twin = lambda;
      tw.twin.plate_masses[a][ja1] -= m1;
      tw.twin.plate_masses[a][ja2] += m2;
      tw.twin.plate_masses[b][jb1] += m1;
      tw.twin.plate_masses[b][jb2] -= m2;
      tw.max_component_diff = std::max(m1, m2);
      tw.plate_a = a;
      tw.plate_b = b;
      return tw;
    }
  return std::nullopt;
}

}  // namespace condenser
