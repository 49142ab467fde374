#pragma once

// Kernel evaluation, regularized kernel-matrix assembly over condenser
// positions, discrete potentials, and an iterative psd check.

#include "condenser/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace condenser {

enum class KernelFamily { Riesz, Logarithmic };

// Riesz kernel |x-y|^(alpha-n) for 0 < alpha < n, or -log|x-y| (n = 2 only;
// positive definiteness requires all geometry inside a set of diameter < 1,
// which assembly enforces).
struct Kernel {
  KernelFamily family = KernelFamily::Riesz;
  double alpha = 2.0;
  int n = 3;

  void validate() const {
    if (n != 2 && n != 3) throw std::invalid_argument("Kernel: dimension n must be 2 or 3");
    if (family == KernelFamily::Riesz) {
      if (!(alpha > 0.0) || !(alpha < n))
        throw std::invalid_argument("Kernel: Riesz requires 0 < alpha < n");
    } else if (n != 2) {
      throw std::invalid_argument("Kernel: logarithmic kernel requires n = 2");
    }
  }

  double at_distance(double r) const {
    if (r == 0.0) return inf;
    return family == KernelFamily::Riesz ? std::pow(r, alpha - n) : -std::log(r);
  }
};

inline double kernel_eval(const Kernel& k, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                          const Eigen::Ref<const Eigen::RowVectorXd>& y) {
  return k.at_distance((x - y).norm());
}

// Effective radius replacing the singular diagonal: the node's cell is
// treated as a round panel of equal measure (disc of area w in R^3, segment
// of length w in R^2, averaged against the alpha=2 kernel).
inline double regularization_radius(double cell_weight, int dim) {
  return dim == 3 ? 0.5 * std::sqrt(cell_weight / std::numbers::pi) : 0.25 * cell_weight;
}

// Dense kernel matrix over the merged positions of a condenser. Off-diagonal
// entries are pointwise kernel values; diagonal entries evaluate the kernel
// at each position's regularization radius.
struct KernelMatrix {
  Kernel kernel;
  Matrix entries;      // position x position, symmetric
  Matrix points;       // position coordinates
  Vector diag_radii;   // effective radii used on the diagonal
  std::vector<std::vector<std::pair<int, int>>> node_map;  // position -> (plate, node) members

  int size() const { return static_cast<int>(entries.rows()); }
};

inline KernelMatrix assemble_kernel_matrix(const Kernel& k, const Condenser& c) {
  k.validate();
  if (k.n != c.dimension())
    throw std::invalid_argument("assemble_kernel_matrix: kernel and condenser dimensions differ");

  const int m = c.position_count();
  const Matrix& pts = c.position_points();
  KernelMatrix km;
  km.kernel = k;
  km.points = pts;
  km.node_map = c.position_members();
  km.diag_radii.resize(m);
  km.entries.resize(m, m);

  for (int p = 0; p < m; ++p) {
    const double override_r = c.position_self_radii()[p];
    km.diag_radii[p] = override_r > 0.0 ? override_r
                                        : regularization_radius(c.position_weights()[p], k.n);
  }

  double max_dist = 0.0;
  for (int p = 0; p < m; ++p) {
    km.entries(p, p) = k.at_distance(km.diag_radii[p]);
    for (int q = p + 1; q < m; ++q) {
      const double d = (pts.row(p) - pts.row(q)).norm();
      if (d == 0.0)
        throw std::domain_error(
            "assemble_kernel_matrix: coincident nodes on oppositely-signed plates");
      max_dist = std::max(max_dist, d);
      const double v = k.at_distance(d);
      km.entries(p, q) = v;
      km.entries(q, p) = v;
    }
  }
  if (k.family == KernelFamily::Logarithmic) {
    double reach = max_dist;
    for (int p = 0; p < m; ++p) reach = std::max(reach, 2.0 * km.diag_radii[p]);
    if (reach >= 1.0)
      throw std::domain_error(
          "assemble_kernel_matrix: logarithmic kernel requires geometry of diameter < 1");
  }
  return km;
}

// Potential of signed node masses at the matrix's own positions: (K w)_p.
// The diagonal regularization applies to each node's self-term.
inline Vector potential(const KernelMatrix& km, const Vector& signed_masses) {
  if (signed_masses.size() != km.size())
    throw std::invalid_argument("potential: mass vector does not match matrix size");
  return km.entries * signed_masses;
}

// Potential of signed point masses at arbitrary evaluation points. A zero
// mass contributes nothing even at its own location; a nonzero mass
// evaluated at its exact location uses diag_radii when provided and yields
// +inf otherwise.
inline Vector potential(const Kernel& k, const Matrix& source_points, const Vector& masses,
                        const Matrix& eval_points, const Vector& diag_radii = Vector()) {
  if (source_points.rows() != masses.size())
    throw std::invalid_argument("potential: source point and mass counts differ");
  Vector out = Vector::Zero(eval_points.rows());
  for (Eigen::Index e = 0; e < eval_points.rows(); ++e) {
    double acc = 0.0;
    for (Eigen::Index p = 0; p < source_points.rows(); ++p) {
      if (masses[p] == 0.0) continue;
      double d = (eval_points.row(e) - source_points.row(p)).norm();
      if (d == 0.0 && p < diag_radii.size() && diag_radii[p] > 0.0) d = diag_radii[p];
      acc += masses[p] * k.at_distance(d);
    }
    out[e] = acc;
  }
  return out;
}

struct PsdReport {
  double lambda_min = 0.0;  // smallest-eigenvalue estimate
  double lambda_max = 0.0;
  bool psd = false;
  int iterations = 0;
};

// Smallest- and largest-eigenvalue estimates from the extreme Ritz values of
// a Lanczos run with full reorthogonalization (random start, fixed seed).
// Ring-symmetric geometries produce tightly clustered extremes that defeat
// plain power iteration, while Krylov extremes settle within a cluster. For
// matrices no larger than the step budget the tridiagonalization is complete
// and the estimates are exact up to rounding. The matrix is flagged psd when
// the smallest estimate clears -tol times the largest diagonal entry.
inline PsdReport check_psd(const Matrix& m, double tol, int max_iters = 20000) {
  if (m.rows() != m.cols()) throw std::invalid_argument("check_psd: matrix must be square");
  PsdReport rep;
  const int n = static_cast<int>(m.rows());
  if (n == 0) {
    rep.psd = true;
    return rep;
  }
  const int budget = std::max(1, std::min(n, std::min(max_iters, 400)));

  std::mt19937 gen(0x5eedbeef);
  std::normal_distribution<double> normal;
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal(gen);
  v.normalize();

  const double scale = m.cwiseAbs().rowwise().sum().maxCoeff();
  Matrix basis(n, budget);
  std::vector<double> diag, offdiag;
  for (int j = 0; j < budget; ++j) {
    basis.col(j) = v;
    Vector w = m * v;
    diag.push_back(v.dot(w));
    auto q = basis.leftCols(j + 1);
    w -= q * (q.transpose() * w);
    w -= q * (q.transpose() * w);  // second pass keeps the basis orthogonal
    const double b = w.norm();
    if (j + 1 == budget || b <= 1e-13 * std::max(1.0, scale)) break;  // invariant subspace
    offdiag.push_back(b);
    v = w / b;
  }

  const int steps = static_cast<int>(diag.size());
  Matrix t = Matrix::Zero(steps, steps);
  for (int j = 0; j < steps; ++j) t(j, j) = diag[j];
  for (int j = 0; j + 1 < steps; ++j) t(j, j + 1) = t(j + 1, j) = offdiag[j];
  Eigen::SelfAdjointEigenSolver<Matrix> es(t, Eigen::EigenvaluesOnly);
  rep.lambda_min = es.eigenvalues().minCoeff();
  rep.lambda_max = es.eigenvalues().maxCoeff();
  rep.iterations = steps;
  rep.psd = rep.lambda_min >= -tol * m.diagonal().maxCoeff();
  return rep;
}

inline PsdReport check_psd(const KernelMatrix& km, double tol, int max_iters = 20000) {
  return check_psd(km.entries, tol, max_iters);
}

}  // namespace condenser
