#include <catch2/catch_amalgamated.hpp>

#include "condenser/solver.hpp"
#include "random_instances.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace condenser;
using Catch::Approx;

namespace {

// independent reference projection: bisect the shift t in clamp(v - t*g)
// until the weighted mass matches the target
Vector reference_projection(const Vector& v, const std::optional<Vector>& cap, const Vector& g,
                            double a) {
  auto clamped = [&](double t) {
    Vector x(v.size());
    for (int j = 0; j < v.size(); ++j) {
      const double hi = cap ? (*cap)[j] : inf;
      x[j] = std::clamp(v[j] - t * g[j], 0.0, hi);
    }
    return x;
  };
  auto mass = [&](double t) { return g.dot(clamped(t)); };

  double lo = -1.0, hi = 1.0;
  while (mass(lo) < a) lo *= 2.0;
  while (mass(hi) > a) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) >= a ? lo : hi) = mid;
  }
  return clamped(0.5 * (lo + hi));
}

Condenser two_point_condenser(double sep, double w0, double w1, int sign1) {
  Matrix p0(1, 3), p1(1, 3);
  p0 << 0, 0, 0;
  p1 << sep, 0, 0;
  return Condenser({make_plate(p0, Vector::Constant(1, w0), 1),
                    make_plate(p1, Vector::Constant(1, w1), sign1)},
                   3);
}

}  // namespace

TEST_CASE("simplex projection closed cases") {
  Vector g = Vector::Ones(2);

  Vector v1(2);
  v1 << 0.9, 0.9;
  const Vector p1 = project_capped_simplex(v1, Vector::Ones(2), g, 1.0);
  CHECK(p1[0] == Approx(0.5).margin(1e-12));
  CHECK(p1[1] == Approx(0.5).margin(1e-12));

  Vector v2(2);
  v2 << 2.0, 0.0;
  Vector cap2(2);
  cap2 << 0.6, 1.0;
  const Vector p2 = project_capped_simplex(v2, cap2, g, 1.0);
  CHECK(p2[0] == Approx(0.6).margin(1e-12));
  CHECK(p2[1] == Approx(0.4).margin(1e-12));
  const Vector ref = reference_projection(v2, cap2, g, 1.0);
  CHECK((p2 - ref).cwiseAbs().maxCoeff() <= 1e-9);

  // a feasible point is its own projection
  Vector v3(2);
  v3 << 0.3, 0.7;
  const Vector p3 = project_capped_simplex(v3, Vector::Ones(2), g, 1.0);
  CHECK((p3 - v3).cwiseAbs().maxCoeff() <= 1e-12);

  Vector small_cap = Vector::Constant(2, 0.4);
  CHECK_THROWS_AS(project_capped_simplex(v1, small_cap, g, 1.0), InfeasibleProblemError);
}

TEST_CASE("simplex projection with pinned coordinates") {
  // zero cap entries freeze coordinates; infinite entries leave them free
  Vector v = Vector::Constant(3, 0.5);
  Vector cap(3);
  cap << 0.0, inf, inf;
  const Vector p = project_capped_simplex(v, cap, Vector::Ones(3), 1.7);
  CHECK(p[0] == 0.0);
  CHECK(p[1] == Approx(0.85).margin(1e-12));
  CHECK(p[2] == Approx(0.85).margin(1e-12));

  Vector all_pinned = Vector::Zero(2);
  CHECK_THROWS_AS(project_capped_simplex(Vector::Ones(2), all_pinned, Vector::Ones(2), 1.0),
                  InfeasibleProblemError);
}

TEST_CASE("simplex projection matches the reference on random inputs") {
  std::mt19937 gen(9);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> upos(0.5, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + int(gen() % 5);
    Vector v(n), g(n);
    for (int j = 0; j < n; ++j) {
      v[j] = u(gen);
      g[j] = upos(gen);
    }
    const double a = upos(gen);
    std::optional<Vector> cap;
    if (gen() % 2) {
      Vector cv(n);
      for (int j = 0; j < n; ++j) cv[j] = upos(gen);
      const double reach = g.dot(cv);
      if (reach < 1.2 * a) cv *= 1.2 * a / reach;
      cap = cv;
    }
    const Vector p = project_capped_simplex(v, cap, g, a);
    const Vector ref = reference_projection(v, cap, g, a);
    CHECK(g.dot(p) == Approx(a).epsilon(1e-12));
    CHECK(p.minCoeff() >= 0.0);
    if (cap) CHECK(((*cap) - p).minCoeff() >= -1e-12);
    CHECK((p - ref).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("singleton problem is solved exactly") {
  Matrix pts(1, 3);
  pts << 0, 0, 0;
  const double w = 0.5, fval = 0.3;
  Plate p = make_plate(pts, Vector::Constant(1, w));
  p.f[0] = fval;
  Condenser c({p}, 3);
  const KernelMatrix km = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, c);
  Problem prob{c, km, ExternalField::from_plates(c)};

  const SolveReport rep = solve(prob);
  REQUIRE(rep.converged);
  CHECK(rep.minimizer.plate_masses[0][0] == Approx(1.0).epsilon(1e-12));
  const double d = std::pow(0.5 * std::sqrt(w / std::numbers::pi), -1.0);
  CHECK(rep.weighted_energy == Approx(d + 2.0 * fval).epsilon(1e-12));
}

TEST_CASE("opposite unit charges at distance one") {
  const double w = 0.4;
  Condenser c = two_point_condenser(1.0, w, w, -1);
  const KernelMatrix km = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, c);
  Problem prob{c, km, ExternalField::from_plates(c)};

  const SolveReport rep = solve(prob);
  REQUIRE(rep.converged);
  CHECK(rep.minimizer.plate_masses[0][0] == Approx(1.0).epsilon(1e-12));
  CHECK(rep.minimizer.plate_masses[1][0] == Approx(1.0).epsilon(1e-12));
  const double d = std::pow(0.5 * std::sqrt(w / std::numbers::pi), -1.0);
  CHECK(rep.weighted_energy == Approx(2.0 * d - 2.0).epsilon(1e-12));
}

TEST_CASE("solver agrees with the brute-force oracle on random instances") {
  for (unsigned seed = 1000; seed < 1010; ++seed) {
    const auto inst = testgen::make_instance(seed);
    const auto built = testgen::build(inst);
    Problem prob{built.condenser, built.matrix, built.field};

    SolveOptions opts;
    opts.tol = 1e-11;
    opts.max_iters = 200000;
    const SolveReport rep = solve(prob, opts);
    const BruteForceSolution bf = brute_force_solve(prob);
    REQUIRE(rep.converged);

    const double scale = 1.0 + std::abs(bf.weighted_energy);
    CHECK(std::abs(rep.weighted_energy - bf.weighted_energy) <= 1e-6 * scale);

    if (!bf.tie) {
      double mass_scale = 1.0;
      for (const Vector& pm : bf.minimizer.plate_masses)
        mass_scale = std::max(mass_scale, pm.cwiseAbs().maxCoeff());
      const Vector gap = r_map(rep.minimizer, built.condenser) -
                         r_map(bf.minimizer, built.condenser);
      CHECK(gap.cwiseAbs().maxCoeff() <= 1e-5 * mass_scale);
    }
  }
}

TEST_CASE("descent trace is monotone and iterates stay feasible") {
  const auto inst = testgen::make_instance(1003);
  const auto built = testgen::build(inst);
  Problem prob{built.condenser, built.matrix, built.field};

  SolveOptions opts;
  opts.tol = 1e-9;
  opts.record_iterates = true;
  const SolveReport rep = solve(prob, opts);
  REQUIRE(rep.converged);
  REQUIRE(rep.g_trace.size() >= 2);

  const double jitter = 1e-12 * (1.0 + std::abs(rep.g_trace.front()));
  for (size_t t = 1; t < rep.g_trace.size(); ++t)
    CHECK(rep.g_trace[t] <= rep.g_trace[t - 1] + jitter);

  REQUIRE_FALSE(rep.iterates.empty());
  for (const VectorMeasure& it : rep.iterates) {
    CHECK(is_admissible(it, built.condenser, 1e-10));
    CHECK(is_normalized(it, built.condenser, 1e-10));
  }
}

TEST_CASE("random restarts land on the same minimizer") {
  const auto inst = testgen::make_instance(1006);
  const auto built = testgen::build(inst);
  Problem prob{built.condenser, built.matrix, built.field};

  SolveOptions o1;
  o1.tol = 1e-11;
  o1.max_iters = 200000;
  o1.random_start = true;
  o1.seed = 1;
  SolveOptions o2 = o1;
  o2.seed = 2;

  const SolveReport r1 = solve(prob, o1);
  const SolveReport r2 = solve(prob, o2);
  REQUIRE(r1.converged);
  REQUIRE(r2.converged);

  double mass_scale = 1.0;
  for (const Vector& pm : r1.minimizer.plate_masses)
    mass_scale = std::max(mass_scale, pm.cwiseAbs().maxCoeff());
  const double dist =
      semimetric_distance(r1.minimizer, r2.minimizer, built.matrix, built.condenser);
  CHECK(dist <= 1e-5 * mass_scale);
}

TEST_CASE("disjoint plates give a componentwise unique minimizer") {
  // strictly positive definite kernel matrix and no shared positions, so the
  // minimizing masses themselves are unique, not only their signed weights
  Matrix p0(2, 3), p1(2, 3);
  p0 << 0, 0, 0, 0.8, 0.2, 0.1;
  p1 << 2.0, 0.5, -0.3, 2.4, -0.4, 0.6;
  Plate a = make_plate(p0, Vector::Constant(2, 0.5), 1);
  Plate b = make_plate(p1, Vector::Constant(2, 0.5), -1);
  a.f << 0.2, -0.1;
  b.f << 0.05, 0.3;
  Condenser c({a, b}, 3);
  const KernelMatrix km = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, c);
  Problem prob{c, km, ExternalField::from_plates(c)};

  SolveOptions o1;
  o1.tol = 1e-12;
  o1.max_iters = 200000;
  o1.random_start = true;
  o1.seed = 11;
  SolveOptions o2 = o1;
  o2.seed = 12;
  const SolveReport r1 = solve(prob, o1);
  const SolveReport r2 = solve(prob, o2);
  for (int i = 0; i < c.plate_count(); ++i)
    CHECK((r1.minimizer.plate_masses[i] - r2.minimizer.plate_masses[i]).cwiseAbs().maxCoeff() <=
          1e-5);
}

TEST_CASE("iteration budget exhaustion is reported") {
  Matrix p0(2, 3), p1(2, 3);
  p0 << 0, 0, 0, 0.9, 0.3, 0.0;
  p1 << 2.2, 0.1, 0.4, 2.6, -0.5, -0.2;
  Plate a = make_plate(p0, Vector::Constant(2, 0.5), 1);
  Plate b = make_plate(p1, Vector::Constant(2, 0.5), -1);
  a.f << 0.4, -0.6;
  Condenser c({a, b}, 3);
  const KernelMatrix km = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, c);
  Problem prob{c, km, ExternalField::from_plates(c)};

  SolveOptions opts;
  opts.tol = 0.0;
  opts.max_iters = 2;
  const SolveReport rep = solve(prob, opts);
  CHECK_FALSE(rep.converged);
  CHECK(is_admissible(rep.minimizer, c, 1e-10));
}

TEST_CASE("pinned nodes can make a capped plate infeasible") {
  Matrix pts(2, 3);
  pts << 0, 0, 0, 1, 0, 0;
  Plate p = make_plate(pts, Vector::Constant(2, 0.5));
  p.a = 1.5;
  p.cap = Vector::Ones(2);
  p.f[1] = inf;  // only node 0 may carry mass, reach 1.0 < 1.5
  Condenser c({p}, 3);
  const KernelMatrix km = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, c);
  Problem prob{c, km, ExternalField::from_plates(c)};
  CHECK_THROWS_AS(solve(prob), InfeasibleProblemError);
}

TEST_CASE("brute force handles forced and symmetric cases") {
  // forced point: one node per plate
  Condenser forced = two_point_condenser(1.0, 0.4, 0.4, -1);
  const KernelMatrix km1 = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, forced);
  Problem p1{forced, km1, ExternalField::from_plates(forced)};
  const BruteForceSolution bf1 = brute_force_solve(p1);
  CHECK(bf1.minimizer.plate_masses[0][0] == Approx(1.0).epsilon(1e-12));
  CHECK(bf1.minimizer.plate_masses[1][0] == Approx(1.0).epsilon(1e-12));

  // mirror-symmetric two-node plate splits evenly
  Matrix pts(2, 3);
  pts << -1, 0, 0, 1, 0, 0;
  Condenser sym({make_plate(pts, Vector::Constant(2, 0.5))}, 3);
  const KernelMatrix km2 = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, sym);
  Problem p2{sym, km2, ExternalField::from_plates(sym)};
  const BruteForceSolution bf2 = brute_force_solve(p2);
  CHECK(bf2.minimizer.plate_masses[0][0] == Approx(0.5).epsilon(1e-10));
  CHECK(bf2.minimizer.plate_masses[0][1] == Approx(0.5).epsilon(1e-10));
}

TEST_CASE("brute force rejects oversized problems") {
  const Plate big = build_sphere_plate(Eigen::RowVector3d::Zero(), 1.0, 16);
  Condenser c({big}, 3);
  const KernelMatrix km = assemble_kernel_matrix(Kernel{KernelFamily::Riesz, 2.0, 3}, c);
  Problem prob{c, km, ExternalField::from_plates(c)};
  CHECK_THROWS_AS(brute_force_solve(prob), std::invalid_argument);
}

TEST_CASE("trace csv lists one row per accepted iterate") {
  const auto inst = testgen::make_instance(1001);
  const auto built = testgen::build(inst);
  Problem prob{built.condenser, built.matrix, built.field};
  const SolveReport rep = solve(prob);

  std::ostringstream os;
  write_trace_csv(os, rep);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "iter,G,step,movement");
  size_t rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == rep.g_trace.size());
}
