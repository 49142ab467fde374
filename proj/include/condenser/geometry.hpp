#pragma once

// Discretized condenser geometry: plates as weighted node clouds, builders
// for spheres and rotation bodies, and structural validation.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace condenser {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double inf = std::numeric_limits<double>::infinity();

enum class ProfileFamily { PowerLaw, StretchedExp };

// Axial profile rho(x1) of a rotation body around the x1-axis:
//   PowerLaw:     rho(x) = x^(-s),      s >= 0
//   StretchedExp: rho(x) = exp(-x^s),   s > 0
struct RotationProfile {
  ProfileFamily family = ProfileFamily::PowerLaw;
  double s = 0.0;

  void validate() const {
    if (!std::isfinite(s)) throw std::invalid_argument("RotationProfile: exponent s must be finite");
    if (family == ProfileFamily::PowerLaw && s < 0.0)
      throw std::invalid_argument("RotationProfile: PowerLaw requires s >= 0");
    if (family == ProfileFamily::StretchedExp && s <= 0.0)
      throw std::invalid_argument("RotationProfile: StretchedExp requires s > 0");
  }

  double radius(double x) const {
    return family == ProfileFamily::PowerLaw ? std::pow(x, -s) : std::exp(-std::pow(x, s));
  }

  // log(rho(x)); stays finite where radius() would under- or overflow.
  double log_radius(double x) const {
    return family == ProfileFamily::PowerLaw ? -s * std::log(x) : -std::pow(x, s);
  }

  double dradius(double x) const {
    if (family == ProfileFamily::PowerLaw) return s == 0.0 ? 0.0 : -s * std::pow(x, -s - 1.0);
    return -s * std::pow(x, s - 1.0) * std::exp(-std::pow(x, s));
  }
};

// One plate of a condenser: a node cloud with quadrature weights plus the
// per-plate data of the variational problem.
struct Plate {
  Matrix nodes;         // N x dim coordinates
  Vector cell_weights;  // N positive quadrature weights (areas in R^3, lengths in R^2)
  int sign = +1;        // s_i, +1 or -1
  Vector g;             // N positive constraint weights
  Vector f;             // N external-field samples in (-inf, +inf]
  double a = 1.0;       // prescribed total: <g, mu> = a
  std::optional<Vector> cap;  // per-node upper bounds; present iff the plate is constrained

  // Per-node regularization radius overriding the cell-area rule on the
  // kernel diagonal; empty vector or nonpositive entries mean "use the area
  // rule". The rotation-body builder sets this for rings collapsed onto the
  // axis, where the area rule badly misjudges the tube self-potential.
  Vector self_radii;

  int size() const { return static_cast<int>(cell_weights.size()); }

  double self_radius(int j) const {
    return j < self_radii.size() ? self_radii[j] : 0.0;
  }

  bool constrained() const { return cap.has_value(); }
};

inline Plate make_plate(Matrix nodes, Vector cell_weights, int sign = +1) {
  Plate p;
  const auto n = cell_weights.size();
  p.nodes = std::move(nodes);
  p.cell_weights = std::move(cell_weights);
  p.sign = sign;
  p.g = Vector::Ones(n);
  p.f = Vector::Zero(n);
  p.a = 1.0;
  return p;
}

// A generalized condenser: finitely many signed plates in R^2 or R^3.
//
// On construction, node coordinates shared by equally-signed plates are
// merged into common "positions". Positions index the signed scalar R-image
// of a vector measure (see measures.hpp) and the kernel matrix; this is what
// makes coincident plates work without singular off-diagonal entries.
// Oppositely-signed plates are never merged, so an invalid overlap surfaces
// as a zero distance in validation/assembly rather than a silent
// cancellation.
class Condenser {
 public:
  Condenser(std::vector<Plate> plates, int dimension)
      : plates_(std::move(plates)), dim_(dimension) {
    if (dim_ != 2 && dim_ != 3)
      throw std::invalid_argument("Condenser: dimension must be 2 or 3");
    if (plates_.empty()) throw std::invalid_argument("Condenser: at least one plate required");
    std::map<std::array<double, 4>, int> seen;
    for (int i = 0; i < static_cast<int>(plates_.size()); ++i) {
      const Plate& p = plates_[i];
      const int n = p.size();
      if (n == 0) throw std::invalid_argument("Condenser: plate " + std::to_string(i) + " has no nodes");
      if (p.nodes.rows() != n || p.nodes.cols() != dim_ || p.g.size() != n || p.f.size() != n ||
          (p.cap && p.cap->size() != n) || (p.self_radii.size() != 0 && p.self_radii.size() != n))
        throw std::invalid_argument("Condenser: inconsistent array sizes on plate " + std::to_string(i));
      if (p.sign != 1 && p.sign != -1)
        throw std::invalid_argument("Condenser: plate sign must be +1 or -1");
      node_offsets_.push_back(total_nodes_);
      position_of_.emplace_back(n);
      for (int j = 0; j < n; ++j) {
        std::array<double, 4> key{static_cast<double>(p.sign), p.nodes(j, 0), p.nodes(j, 1),
                                  dim_ == 3 ? p.nodes(j, 2) : 0.0};
        auto [it, fresh] = seen.emplace(key, position_count_);
        if (fresh) {
          ++position_count_;
          first_member_.push_back({i, j});
          members_.emplace_back();
        }
        position_of_[i][j] = it->second;
        members_[it->second].push_back({i, j});
      }
      total_nodes_ += n;
    }
    position_points_.resize(position_count_, dim_);
    position_weights_.resize(position_count_);
    position_self_radii_.resize(position_count_);
    position_signs_.resize(position_count_);
    for (int q = 0; q < position_count_; ++q) {
      auto [i, j] = first_member_[q];
      position_points_.row(q) = plates_[i].nodes.row(j);
      position_weights_[q] = plates_[i].cell_weights[j];
      position_self_radii_[q] = plates_[i].self_radius(j);
      position_signs_[q] = plates_[i].sign;
    }
  }

  const std::vector<Plate>& plates() const { return plates_; }
  int dimension() const { return dim_; }
  int plate_count() const { return static_cast<int>(plates_.size()); }
  int total_nodes() const { return total_nodes_; }
  int node_offset(int plate) const { return node_offsets_[plate]; }

  int position_count() const { return position_count_; }
  int position_of(int plate, int node) const { return position_of_[plate][node]; }
  const std::vector<int>& plate_positions(int plate) const { return position_of_[plate]; }
  const Matrix& position_points() const { return position_points_; }
  const Vector& position_weights() const { return position_weights_; }
  const Vector& position_self_radii() const { return position_self_radii_; }
  const std::vector<int>& position_signs() const { return position_signs_; }
  const std::vector<std::vector<std::pair<int, int>>>& position_members() const { return members_; }

 private:
  std::vector<Plate> plates_;
  int dim_;
  int total_nodes_ = 0;
  int position_count_ = 0;
  std::vector<int> node_offsets_;
  std::vector<std::vector<int>> position_of_;        // plate -> node -> position
  std::vector<std::pair<int, int>> first_member_;    // position -> first (plate, node)
  std::vector<std::vector<std::pair<int, int>>> members_;
  Matrix position_points_;
  Vector position_weights_;
  Vector position_self_radii_;
  std::vector<int> position_signs_;
};

struct ValidationIssue {
  std::string message;
  int plate_a = -1;
  int plate_b = -1;  // second plate for pair issues, -1 otherwise
};

struct PairSeparation {
  int plate_a = -1;
  int plate_b = -1;
  double min_distance = 0.0;
};

struct ValidationReport {
  bool valid = true;
  std::vector<ValidationIssue> issues;
  std::vector<PairSeparation> separations;  // one row per oppositely-signed pair
};

// Checks plate invariants and the disjointness of oppositely-signed plates.
// Equally-signed plates may share nodes or coincide outright.
inline ValidationReport validate_condenser(const Condenser& c) {
  ValidationReport rep;
  auto flag = [&rep](std::string msg, int a, int b = -1) {
    rep.valid = false;
    rep.issues.push_back({std::move(msg), a, b});
  };

  const auto& plates = c.plates();
  for (int i = 0; i < c.plate_count(); ++i) {
    const Plate& p = plates[i];
    if (!(p.a > 0.0) || !std::isfinite(p.a)) flag("mass target a must be positive and finite", i);
    bool weights_ok = true, g_ok = true, f_ok = true;
    bool any_finite_f = false;
    for (int j = 0; j < p.size(); ++j) {
      if (!(p.cell_weights[j] > 0.0) || !std::isfinite(p.cell_weights[j])) weights_ok = false;
      if (!(p.g[j] > 0.0) || !std::isfinite(p.g[j])) g_ok = false;
      if (std::isnan(p.f[j]) || p.f[j] == -inf) f_ok = false;
      if (p.f[j] < inf) any_finite_f = true;
    }
    if (!weights_ok) flag("cell_weights must be positive and finite", i);
    if (!g_ok) flag("g must be positive and finite", i);
    if (!f_ok) flag("f samples must lie in (-inf, +inf]", i);
    if (!any_finite_f) flag("external field is +inf at every node", i);
    if (p.cap) {
      bool cap_ok = true;
      double total = 0.0;
      for (int j = 0; j < p.size(); ++j) {
        if (!((*p.cap)[j] > 0.0) || !std::isfinite((*p.cap)[j])) cap_ok = false;
        else total += p.g[j] * (*p.cap)[j];
      }
      if (!cap_ok) flag("cap entries must be positive and finite", i);
      else if (!(total > p.a)) flag("cap admits no interior measure: sum(g*cap) must exceed a", i);
    }
  }

  for (int i = 0; i < c.plate_count(); ++i)
    for (int j = i + 1; j < c.plate_count(); ++j) {
      if (plates[i].sign * plates[j].sign != -1) continue;
      double dmin = inf;
      for (int u = 0; u < plates[i].size(); ++u)
        for (int v = 0; v < plates[j].size(); ++v)
          dmin = std::min(dmin, (plates[i].nodes.row(u) - plates[j].nodes.row(v)).norm());
      rep.separations.push_back({i, j, dmin});
      if (!(dmin > 0.0)) flag("oppositely-signed plates share a node", i, j);
    }
  return rep;
}

namespace detail {

// Self-interaction radius of a tube segment (length h, radius rho): the
// radius whose Riesz alpha=2 point value matches the panel-averaged
// line-charge potential (2/h)*asinh(h/(2*rho)). log_rho is used instead of
// rho when the latter has underflowed.
inline double tube_self_radius(double h, double rho, double log_rho) {
  double t;
  if (rho > 0.0 && h < 1e12 * rho)
    t = std::asinh(h / (2.0 * rho));
  else
    t = std::log(h) - log_rho;  // asinh(z) ~ log(2z) for large z
  return h / (2.0 * t);
}

}  // namespace detail

namespace detail {

// Rings of n_angular nodes at the given axial stations. The number of
// distinct angular positions per ring follows the ring circumference so that
// surface panels stay near-square: a ring ideally supports about
// circumference/height positions, and when that falls below n_angular the
// nodes are grouped onto the fewer positions (coincident within a group,
// with the self-interaction radius of the merged panel). Point-charge
// discretizations of panels much thinner than their neighbor spacing produce
// indefinite matrices, which the grouping avoids. Rings whose circumference
// falls below their panel height collapse onto the axis entirely and carry a
// tube-averaged self-interaction radius.
inline Plate build_rings(const RotationProfile& profile, const std::vector<double>& stations,
                         const std::vector<double>& heights, int n_angular) {
  const double two_pi = 2.0 * std::numbers::pi;
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const int n_axial = static_cast<int>(stations.size());
  const int n = n_axial * n_angular;
  Matrix nodes(n, 3);
  Vector weights(n), radii = Vector::Zero(n);

  int row = 0;
  for (int k = 0; k < n_axial; ++k) {
    const double x = stations[k];
    const double h = heights[k];
    const double rho = profile.radius(x);
    const double lrho = profile.log_radius(x);
    const double slant = std::hypot(1.0, profile.dradius(x));
    double area = two_pi * rho * slant * h;
    if (two_pi * rho < h) {
      // collapsed ring: n_angular coincident axis nodes sharing the tube patch
      if (!(area > 0.0)) area = std::numeric_limits<double>::min();
      const double r_self = tube_self_radius(h, rho, lrho);
      for (int t = 0; t < n_angular; ++t, ++row) {
        nodes.row(row) << x, 0.0, 0.0;
        weights[row] = std::max(area / n_angular, std::numeric_limits<double>::min());
        radii[row] = r_self;
      }
    } else {
      const double ideal = two_pi * rho / h;  // angular positions a square panel allows
      const int n_eff =
          ideal >= n_angular ? n_angular : std::max<int>(1, std::lround(ideal));
      const double offset = golden_angle * k;
      // merged panels need the disc-equivalent radius of the merged area
      const double r_self =
          n_eff < n_angular ? 0.5 * std::sqrt(area / (n_eff * std::numbers::pi)) : 0.0;
      const auto group_begin = [&](int g) { return (g * n_angular + n_eff - 1) / n_eff; };
      for (int t = 0; t < n_angular; ++t, ++row) {
        const int group = t * n_eff / n_angular;
        const int group_size = group_begin(group + 1) - group_begin(group);
        const double theta = offset + two_pi * group / n_eff;
        nodes.row(row) << x, rho * std::cos(theta), rho * std::sin(theta);
        weights[row] = area / (n_eff * group_size);
        radii[row] = r_self;
      }
    }
  }

  Plate p = make_plate(std::move(nodes), std::move(weights));
  p.self_radii = std::move(radii);
  return p;
}

}  // namespace detail

// Lateral surface of the rotation body {x2^2 + x3^2 = rho(x1)^2} discretized
// as n_axial rings of n_angular nodes each (R^3 only). The axial grid is
// cell-centered uniform, except for PowerLaw profiles with s > 0 whose
// singular head gets log-spaced stations from x_max/1e4. Exponentially thin
// rings collapse onto the axis; see detail::build_rings.
inline Plate build_rotation_body(const RotationProfile& profile, double x_max, int n_axial,
                                 int n_angular) {
  profile.validate();
  if (!(x_max > 0.0) || !std::isfinite(x_max))
    throw std::invalid_argument("build_rotation_body: x_max must be positive and finite");
  if (n_axial < 1 || n_angular < 1)
    throw std::invalid_argument("build_rotation_body: n_axial and n_angular must be at least 1");

  std::vector<double> stations(n_axial), heights(n_axial);
  if (profile.family == ProfileFamily::PowerLaw && profile.s > 0.0) {
    // singular head: log-spaced stations keep the flare resolved
    const double x_min = x_max * 1e-4;
    if (n_axial == 1) {
      stations[0] = x_min;
      heights[0] = x_max - x_min;
    } else {
      const double ratio = std::log(x_max / x_min);
      for (int k = 0; k < n_axial; ++k)
        stations[k] = x_min * std::exp(ratio * k / (n_axial - 1));
      stations[n_axial - 1] = x_max;
      for (int k = 0; k < n_axial; ++k) {
        const double lo = k == 0 ? stations[0] : 0.5 * (stations[k - 1] + stations[k]);
        const double hi = k == n_axial - 1 ? stations[k] : 0.5 * (stations[k] + stations[k + 1]);
        heights[k] = hi - lo;
      }
    }
  } else {
    const double h = x_max / n_axial;
    for (int k = 0; k < n_axial; ++k) {
      stations[k] = (k + 0.5) * h;
      heights[k] = h;
    }
  }

  return detail::build_rings(profile, stations, heights, n_angular);
}

// The axial slice x1 in [x_lo, x_hi] of the same surface, on a
// cell-centered uniform grid (no nodes at the slice boundaries, so adjacent
// slices stay disjoint). The axial step is matched to the widest ring in the
// slice (which carries n_angular nodes) so that panels come out near-square;
// n_axial only caps the number of stations.
inline Plate build_profile_segment(const RotationProfile& profile, double x_lo, double x_hi,
                                   int n_axial, int n_angular) {
  profile.validate();
  if (!(x_hi > x_lo)) throw std::invalid_argument("build_profile_segment: empty interval");
  if (n_axial < 1 || n_angular < 1)
    throw std::invalid_argument("build_profile_segment: n_axial and n_angular must be at least 1");
  const double length = x_hi - x_lo;
  double rho_max = 0.0;
  for (int i = 0; i <= 256; ++i)
    rho_max = std::max(rho_max, profile.radius(x_lo + length * i / 256));
  const double h_target = 2.0 * std::numbers::pi * rho_max / n_angular;
  int n_ax = n_axial;  // vanishing rings: finest grid, the axis tube carries it
  if (h_target > 0.0 && std::isfinite(h_target))
    n_ax = static_cast<int>(std::clamp(std::ceil(length / h_target), 1.0, double(n_axial)));
  else if (std::isinf(h_target))
    n_ax = 1;
  const double h = length / n_ax;
  std::vector<double> stations(n_ax), heights(n_ax, h);
  for (int k = 0; k < n_ax; ++k) stations[k] = x_lo + (k + 0.5) * h;
  return detail::build_rings(profile, stations, heights, n_angular);
}

// Quasi-uniform sphere plate: Fibonacci lattice in R^3, equiangular points
// in R^2 (starting at angle 0). Cell weights are the exact surface measure
// split evenly across nodes.
inline Plate build_sphere_plate(const Vector& center, double radius, int n_nodes) {
  const int dim = static_cast<int>(center.size());
  if (dim != 2 && dim != 3)
    throw std::invalid_argument("build_sphere_plate: center must have dimension 2 or 3");
  if (!(radius > 0.0) || !std::isfinite(radius))
    throw std::invalid_argument("build_sphere_plate: radius must be positive and finite");
  if (n_nodes < 4) throw std::invalid_argument("build_sphere_plate: need at least 4 nodes");

  Matrix nodes(n_nodes, dim);
  Vector weights(n_nodes);
  if (dim == 3) {
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n_nodes; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / n_nodes;
      const double r_perp = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden_angle * i;
      nodes(i, 0) = center[0] + radius * r_perp * std::cos(phi);
      nodes(i, 1) = center[1] + radius * r_perp * std::sin(phi);
      nodes(i, 2) = center[2] + radius * z;
    }
    weights.setConstant(4.0 * std::numbers::pi * radius * radius / n_nodes);
  } else {
    for (int i = 0; i < n_nodes; ++i) {
      const double theta = 2.0 * std::numbers::pi * i / n_nodes;
      nodes(i, 0) = center[0] + radius * std::cos(theta);
      nodes(i, 1) = center[1] + radius * std::sin(theta);
    }
    weights.setConstant(2.0 * std::numbers::pi * radius / n_nodes);
  }
  return make_plate(std::move(nodes), std::move(weights));
}

}  // namespace condenser
