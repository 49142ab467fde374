#pragma once

// Minimization of the weighted energy G over the product of capped,
// g-weighted simplices: projected gradient with trace reporting, plus an
// exhaustive active-set oracle for small instances.

#include "condenser/measures.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace condenser {

struct InfeasibleProblemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Problem {
  const Condenser& condenser;
  const KernelMatrix& kernel_matrix;
  ExternalField field;
};

// Euclidean projection onto {0 <= w <= cap, <g,w> = a} by monotone bisection
// on the shift t in w(t) = clamp(v - t*g, 0, cap), followed by an exact
// solve on the final active pattern. Cap entries may be zero (pinned
// coordinates); pass no cap for the unbounded simplex.
inline Vector project_capped_simplex(const Vector& v, const std::optional<Vector>& cap,
                                     const Vector& g, double a) {
  const Eigen::Index n = v.size();
  if (g.size() != n || (cap && cap->size() != n))
    throw std::invalid_argument("project_capped_simplex: size mismatch");
  if (!(a > 0.0)) throw std::invalid_argument("project_capped_simplex: a must be positive");

  auto ub = [&](Eigen::Index j) { return cap ? (*cap)[j] : inf; };
  auto weighted_sum = [&](double t) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      s += g[j] * std::clamp(v[j] - t * g[j], 0.0, ub(j));
    return s;
  };

  double hi = (v.array() / g.array()).maxCoeff();  // all coordinates at 0
  double lo = hi;
  bool bounded = false;
  if (cap) {
    // infinite cap entries contribute no finite bracket; only an all-finite
    // cap vector pins the lower shift (and can make the target unreachable)
    double reach = 0.0;
    bounded = true;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::isfinite((*cap)[j])) {
        reach += g[j] * (*cap)[j];
        lo = std::min(lo, (v[j] - (*cap)[j]) / g[j]);
      } else {
        bounded = false;
      }
    }
    if (bounded && reach < a * (1.0 - 1e-12))
      throw InfeasibleProblemError("project_capped_simplex: caps sum below the mass target");
  }
  if (!bounded) {
    double width = 1.0 + std::abs(lo);
    while (weighted_sum(lo) < a) {
      lo -= width;
      width *= 2.0;
      if (!std::isfinite(lo))
        throw InfeasibleProblemError("project_capped_simplex: failed to bracket the shift");
    }
  }

  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (weighted_sum(mid) >= a ? lo : hi) = mid;
  }

  auto assemble = [&](double t) {
    Vector w(n);
    for (Eigen::Index j = 0; j < n; ++j) w[j] = std::clamp(v[j] - t * g[j], 0.0, ub(j));
    return w;
  };

  // exact solve for t on the bisection's active pattern
  const double t_mid = 0.5 * (lo + hi);
  double fixed_sum = 0.0, free_gv = 0.0, free_gg = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double raw = v[j] - t_mid * g[j];
    if (raw >= ub(j)) fixed_sum += g[j] * ub(j);
    else if (raw > 0.0) {
      free_gv += g[j] * v[j];
      free_gg += g[j] * g[j];
    }
  }
  if (free_gg > 0.0) {
    const double t_star = (free_gv + fixed_sum - a) / free_gg;
    Vector w = assemble(t_star);
    if (std::abs(g.dot(w) - a) <= 1e-12 * a) return w;
  }
  Vector w = assemble(t_mid);
  if (std::abs(g.dot(w) - a) <= std::abs(g.dot(assemble(lo)) - a)) return w;
  return assemble(lo);
}

struct SolveOptions {
  double tol = 1e-8;
  int max_iters = 50000;
  unsigned seed = 0;
  bool random_start = false;   // seed-dependent start instead of the default
  bool record_iterates = false;
  int trailing_window = 5;
};

struct SolveReport {
  VectorMeasure minimizer;
  double weighted_energy = 0.0;  // G at the returned iterate
  int iterations = 0;
  bool converged = false;
  double step_base = 0.0;  // 1/L before any backtracking
  std::vector<double> g_trace;         // G at iterate k, k = 0 is the start
  std::vector<double> step_trace;      // accepted step producing iterate k
  std::vector<double> movement_trace;  // max plate-wise energy-norm movement into iterate k
  std::vector<double> trailing_distances;  // pairwise semimetric among trailing iterates
  std::vector<VectorMeasure> iterates;     // populated when opts.record_iterates
};

inline void write_trace_csv(std::ostream& os, const SolveReport& rep) {
  os << "iter,G,step,movement\n";
  os.precision(17);
  for (std::size_t k = 0; k < rep.g_trace.size(); ++k)
    os << k << ',' << rep.g_trace[k] << ',' << rep.step_trace[k] << ',' << rep.movement_trace[k]
       << '\n';
}

inline void write_trace_csv(const std::string& path, const SolveReport& rep) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_trace_csv: cannot open " + path);
  write_trace_csv(os, rep);
}

namespace detail {

// Per-plate effective caps with f = +inf nodes pinned to zero, and the
// finite field samples used in arithmetic.
struct SolveMask {
  std::vector<std::optional<Vector>> cap_eff;
  std::vector<Vector> f_fin;
};

inline SolveMask build_mask(const Condenser& c, const std::vector<Vector>& f) {
  SolveMask m;
  for (int i = 0; i < c.plate_count(); ++i) {
    const Plate& p = c.plates()[i];
    Vector f_fin = f[i];
    std::optional<Vector> cap = p.cap;
    bool any_forbidden = false;
    for (int j = 0; j < p.size(); ++j)
      if (f[i][j] == inf) {
        any_forbidden = true;
        f_fin[j] = 0.0;
      }
    if (any_forbidden) {
      Vector ce = cap ? *cap : Vector::Constant(p.size(), inf);
      for (int j = 0; j < p.size(); ++j)
        if (f[i][j] == inf) ce[j] = 0.0;
      cap = std::move(ce);
    }
    double reach = 0.0;
    if (cap)
      for (int j = 0; j < p.size(); ++j) reach += p.g[j] * (*cap)[j];
    else
      reach = inf;
    if (reach < p.a * (1.0 - 1e-12))
      throw InfeasibleProblemError("solve: plate " + std::to_string(i) +
                                   " cannot carry its mass target under caps and f = +inf nodes");
    m.cap_eff.push_back(std::move(cap));
    m.f_fin.push_back(std::move(f_fin));
  }
  return m;
}

// Largest-eigenvalue estimate of the node-space quadratic form S^T K S by a
// bounded power iteration (no failure path; the Armijo fallback absorbs a
// slightly loose estimate).
inline double node_form_lipschitz(const Condenser& c, const KernelMatrix& km) {
  const int total = c.total_nodes();
  auto apply = [&](const Vector& x) {
    Vector r = Vector::Zero(c.position_count());
    for (int i = 0; i < c.plate_count(); ++i) {
      const double s = c.plates()[i].sign;
      const int off = c.node_offset(i);
      for (int j = 0; j < c.plates()[i].size(); ++j) r[c.position_of(i, j)] += s * x[off + j];
    }
    Vector kr = km.entries * r;
    Vector out(total);
    for (int i = 0; i < c.plate_count(); ++i) {
      const double s = c.plates()[i].sign;
      const int off = c.node_offset(i);
      for (int j = 0; j < c.plates()[i].size(); ++j) out[off + j] = s * kr[c.position_of(i, j)];
    }
    return out;
  };
  std::mt19937 gen(0x10551u);
  std::normal_distribution<double> normal;
  Vector v(total);
  for (int i = 0; i < total; ++i) v[i] = normal(gen);
  v.normalize();
  double rayleigh = 0.0;
  for (int it = 0; it < 300; ++it) {
    Vector w = apply(v);
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

// Projected-gradient minimization of G(mu) = (Rmu)^T K (Rmu) + 2<f,mu> over
// the admissible class. Step 1/L in the weighted-potential direction with
// backtracking; stops when the largest plate-wise movement in the energy
// norm falls below opts.tol.
inline SolveReport solve(const Problem& p, const SolveOptions& opts = {}) {
  const Condenser& c = p.condenser;
  const KernelMatrix& K = p.kernel_matrix;
  const int P = c.plate_count();
  const auto f = field_samples(p.field, K, c);
  const auto mask = detail::build_mask(c, f);

  auto scatter = [&](const std::vector<Vector>& x) {
    Vector r = Vector::Zero(c.position_count());
    for (int i = 0; i < P; ++i) {
      const double s = c.plates()[i].sign;
      for (int j = 0; j < c.plates()[i].size(); ++j) r[c.position_of(i, j)] += s * x[i][j];
    }
    return r;
  };
  struct Eval {
    double G;
    Vector pot;  // K * R(x), indexed by positions
  };
  auto evaluate = [&](const std::vector<Vector>& x) {
    const Vector r = scatter(x);
    Vector pot = K.entries * r;
    double lin = 0.0;
    for (int i = 0; i < P; ++i) lin += mask.f_fin[i].dot(x[i]);
    return Eval{r.dot(pot) + 2.0 * lin, std::move(pot)};
  };
  auto plate_norm = [&](const Vector& d, int i) {
    Vector r = Vector::Zero(c.position_count());
    for (int j = 0; j < c.plates()[i].size(); ++j) r[c.position_of(i, j)] += d[j];
    return std::sqrt(std::max(0.0, r.dot(K.entries * r)));
  };

  std::vector<Vector> x(P);
  if (opts.random_start) {
    std::mt19937 gen(opts.seed);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int i = 0; i < P; ++i) {
      const Plate& pl = c.plates()[i];
      Vector v(pl.size());
      for (int j = 0; j < pl.size(); ++j) v[j] = u(gen) / pl.g[j];
      x[i] = project_capped_simplex(v, mask.cap_eff[i], pl.g, pl.a);
    }
  } else {
    for (int i = 0; i < P; ++i) {
      const Plate& pl = c.plates()[i];
      double w_sum = pl.cell_weights.sum();
      Vector v = (pl.a / w_sum) * pl.cell_weights.cwiseQuotient(pl.g);
      x[i] = project_capped_simplex(v, mask.cap_eff[i], pl.g, pl.a);
    }
  }

  const double L = detail::node_form_lipschitz(c, K);
  SolveReport rep;
  rep.step_base = 1.0 / L;

  Eval cur = evaluate(x);
  rep.g_trace.push_back(cur.G);
  rep.step_trace.push_back(0.0);
  rep.movement_trace.push_back(0.0);
  auto snapshot = [&]() {
    VectorMeasure mu;
    mu.plate_masses = x;
    return mu;
  };
  if (opts.record_iterates) rep.iterates.push_back(snapshot());
  std::deque<VectorMeasure> trailing;
  trailing.push_back(snapshot());

  for (int k = 1; k <= opts.max_iters; ++k) {
    std::vector<Vector> W(P);
    for (int i = 0; i < P; ++i) {
      const double s = c.plates()[i].sign;
      W[i].resize(c.plates()[i].size());
      for (int j = 0; j < c.plates()[i].size(); ++j)
        W[i][j] = s * cur.pot[c.position_of(i, j)] + mask.f_fin[i][j];
    }

    double tau = 1.0 / L;
    std::vector<Vector> y(P);
    Eval next{};
    bool accepted = false;
    for (int halve = 0; halve < 50 && !accepted; ++halve) {
      for (int i = 0; i < P; ++i)
        y[i] = project_capped_simplex(x[i] - tau * W[i], mask.cap_eff[i], c.plates()[i].g,
                                      c.plates()[i].a);
      next = evaluate(y);
      if (next.G <= cur.G + 1e-13 * (1.0 + std::abs(cur.G)))
        accepted = true;
      else
        tau *= 0.5;
    }
    if (!accepted) {
      rep.converged = true;  // no descent possible within rounding
      break;
    }

    double movement = 0.0;
    for (int i = 0; i < P; ++i) {
      const Vector d = y[i] - x[i];
      if (d.cwiseAbs().maxCoeff() > 0.0) movement = std::max(movement, plate_norm(d, i));
    }
    x = std::move(y);
    cur = next;
    rep.iterations = k;
    rep.g_trace.push_back(cur.G);
    rep.step_trace.push_back(tau);
    rep.movement_trace.push_back(movement);
    if (opts.record_iterates) rep.iterates.push_back(snapshot());
    trailing.push_back(snapshot());
    if (static_cast<int>(trailing.size()) > std::max(2, opts.trailing_window))
      trailing.pop_front();
    if (movement <= opts.tol) {
      rep.converged = true;
      break;
    }
  }

  for (std::size_t s = 0; s < trailing.size(); ++s)
    for (std::size_t t = s + 1; t < trailing.size(); ++t)
      rep.trailing_distances.push_back(semimetric_distance(trailing[s], trailing[t], K, c));

  rep.minimizer = snapshot();
  rep.weighted_energy = cur.G;
  return rep;
}

struct BruteForceSolution {
  VectorMeasure minimizer;
  double weighted_energy = inf;
  bool tie = false;  // distinct R-images at equal optimal energy
};

// Exhaustive active-set oracle: every assignment of each node to {at 0, at
// cap, free}, equality-constrained stationarity solve on the free block,
// feasible candidates filtered, best kept (lexicographically first on ties).
inline BruteForceSolution brute_force_solve(const Problem& p) {
  const Condenser& c = p.condenser;
  const KernelMatrix& K = p.kernel_matrix;
  const int total = c.total_nodes();
  if (total > 12)
    throw std::invalid_argument("brute_force_solve: node budget exceeded (at most 12 nodes)");
  const auto f = field_samples(p.field, K, c);
  const auto mask = detail::build_mask(c, f);

  const int P = c.plate_count();
  Vector g_flat(total), f_flat(total), cap_flat(total);
  std::vector<int> plate_of(total);
  for (int i = 0; i < P; ++i) {
    const Plate& pl = c.plates()[i];
    for (int j = 0; j < pl.size(); ++j) {
      const int u = c.node_offset(i) + j;
      g_flat[u] = pl.g[j];
      f_flat[u] = mask.f_fin[i][j];
      cap_flat[u] = mask.cap_eff[i] ? (*mask.cap_eff[i])[j] : inf;
      plate_of[u] = i;
    }
  }
  Matrix H(total, total);
  for (int u = 0; u < total; ++u)
    for (int v = 0; v < total; ++v) {
      const int pu = c.position_of(plate_of[u], u - c.node_offset(plate_of[u]));
      const int pv = c.position_of(plate_of[v], v - c.node_offset(plate_of[v]));
      H(u, v) = c.plates()[plate_of[u]].sign * c.plates()[plate_of[v]].sign * K.entries(pu, pv);
    }

  enum State { At0, AtCap, Free };
  std::vector<std::vector<State>> choices(total);
  for (int u = 0; u < total; ++u) {
    choices[u].push_back(At0);
    if (cap_flat[u] == 0.0) continue;  // pinned by f = +inf
    if (std::isfinite(cap_flat[u])) choices[u].push_back(AtCap);
    choices[u].push_back(Free);
  }

  auto r_image = [&](const Vector& x) {
    Vector r = Vector::Zero(c.position_count());
    for (int u = 0; u < total; ++u) {
      const int i = plate_of[u];
      r[c.position_of(i, u - c.node_offset(i))] += c.plates()[i].sign * x[u];
    }
    return r;
  };

  BruteForceSolution best;
  Vector best_r;
  std::vector<int> digit(total, 0);
  bool done = false;
  while (!done) {
    Vector x = Vector::Zero(total);
    std::vector<int> free_nodes;
    for (int u = 0; u < total; ++u) {
      switch (choices[u][digit[u]]) {
        case At0: break;
        case AtCap: x[u] = cap_flat[u]; break;
        case Free: free_nodes.push_back(u); break;
      }
    }

    bool viable = true;
    std::vector<int> free_plates;
    {
      std::vector<bool> has_free(P, false);
      for (int u : free_nodes) has_free[plate_of[u]] = true;
      std::vector<double> fixed_mass(P, 0.0);
      for (int u = 0; u < total; ++u)
        if (choices[u][digit[u]] == AtCap) fixed_mass[plate_of[u]] += g_flat[u] * x[u];
      for (int i = 0; i < P; ++i) {
        if (has_free[i]) free_plates.push_back(i);
        else if (std::abs(fixed_mass[i] - c.plates()[i].a) > 1e-9 * std::max(1.0, c.plates()[i].a))
          viable = false;
      }
    }

    if (viable) {
      const int nf = static_cast<int>(free_nodes.size());
      const int np = static_cast<int>(free_plates.size());
      bool solved = true;
      if (nf > 0) {
        Matrix A = Matrix::Zero(nf + np, nf + np);
        Vector rhs(nf + np);
        for (int a = 0; a < nf; ++a) {
          double fixed_dot = 0.0;
          for (int u = 0; u < total; ++u)
            if (x[u] != 0.0 && choices[u][digit[u]] == AtCap) fixed_dot += H(free_nodes[a], u) * x[u];
          rhs[a] = -2.0 * f_flat[free_nodes[a]] - 2.0 * fixed_dot;
          for (int b = 0; b < nf; ++b) A(a, b) = 2.0 * H(free_nodes[a], free_nodes[b]);
          for (int q = 0; q < np; ++q)
            if (plate_of[free_nodes[a]] == free_plates[q]) A(a, nf + q) = -g_flat[free_nodes[a]];
        }
        for (int q = 0; q < np; ++q) {
          double fixed_mass = 0.0;
          for (int u = 0; u < total; ++u)
            if (plate_of[u] == free_plates[q] && choices[u][digit[u]] == AtCap)
              fixed_mass += g_flat[u] * x[u];
          rhs[nf + q] = c.plates()[free_plates[q]].a - fixed_mass;
          for (int a = 0; a < nf; ++a)
            if (plate_of[free_nodes[a]] == free_plates[q]) A(nf + q, a) = g_flat[free_nodes[a]];
        }
        Eigen::FullPivLU<Matrix> lu(A);
        Vector z;
        if (lu.isInvertible()) {
          z = lu.solve(rhs);
        } else {
          z = A.completeOrthogonalDecomposition().solve(rhs);
          if ((A * z - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) solved = false;
        }
        if (solved)
          for (int a = 0; a < nf; ++a) {
            const double val = z[a];
            if (val < -1e-9 || val > cap_flat[free_nodes[a]] + 1e-9) {
              solved = false;
              break;
            }
            x[free_nodes[a]] = std::max(0.0, val);
          }
      }
      if (solved) {
        const double G = x.dot(H * x) + 2.0 * f_flat.dot(x);
        const double tie_tol = 1e-12 * (1.0 + std::abs(G));
        if (G < best.weighted_energy - tie_tol) {
          best.weighted_energy = G;
          best.tie = false;
          best.minimizer = VectorMeasure::zeros(c);
          for (int u = 0; u < total; ++u)
            best.minimizer.plate_masses[plate_of[u]][u - c.node_offset(plate_of[u])] = x[u];
          best_r = r_image(x);
        } else if (std::isfinite(best.weighted_energy) && G <= best.weighted_energy + tie_tol) {
          const Vector r = r_image(x);
          const double mass_scale = std::max(1.0, best_r.cwiseAbs().maxCoeff());
          if ((r - best_r).cwiseAbs().maxCoeff() > 1e-9 * mass_scale) best.tie = true;
        }
      }
    }

    done = true;
    for (int u = total - 1; u >= 0; --u) {
      if (++digit[u] < static_cast<int>(choices[u].size())) {
        done = false;
        break;
      }
      digit[u] = 0;
    }
  }

  if (!std::isfinite(best.weighted_energy))
    throw InfeasibleProblemError("brute_force_solve: no feasible stationary point found");
  return best;
}

}  // namespace condenser
