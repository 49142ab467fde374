#pragma once

// Vector measures on a condenser, the R-map onto signed position weights,
// plain and field-weighted energies, and the energy semimetric.

#include "condenser/kernels.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace condenser {

// Signed scalar weights over condenser positions (the discrete R-image).
using SignedNodeWeights = Vector;

// Nonnegative node masses, one vector per plate.
struct VectorMeasure {
  std::vector<Vector> plate_masses;

  static VectorMeasure zeros(const Condenser& c) {
    VectorMeasure mu;
    for (const Plate& p : c.plates()) mu.plate_masses.push_back(Vector::Zero(p.size()));
    return mu;
  }

  int plate_count() const { return static_cast<int>(plate_masses.size()); }

  bool conforms(const Condenser& c) const {
    if (plate_count() != c.plate_count()) return false;
    for (int i = 0; i < plate_count(); ++i)
      if (plate_masses[i].size() != c.plates()[i].size()) return false;
    return true;
  }
};

inline void require_conformant(const VectorMeasure& mu, const Condenser& c) {
  if (!mu.conforms(c))
    throw std::invalid_argument("vector measure does not conform to the condenser");
}

// Componentwise admissibility: nonnegative masses, caps respected where the
// plate has them.
inline bool is_admissible(const VectorMeasure& mu, const Condenser& c, double tol = 0.0) {
  require_conformant(mu, c);
  for (int i = 0; i < c.plate_count(); ++i) {
    const Plate& p = c.plates()[i];
    for (int j = 0; j < p.size(); ++j) {
      if (mu.plate_masses[i][j] < -tol) return false;
      if (p.cap && mu.plate_masses[i][j] > (*p.cap)[j] + tol) return false;
    }
  }
  return true;
}

// Whether every plate meets its constraint <g, mu_i> = a_i within rtol.
inline bool is_normalized(const VectorMeasure& mu, const Condenser& c, double rtol = 1e-10) {
  require_conformant(mu, c);
  for (int i = 0; i < c.plate_count(); ++i) {
    const Plate& p = c.plates()[i];
    if (std::abs(p.g.dot(mu.plate_masses[i]) - p.a) > rtol * std::abs(p.a)) return false;
  }
  return true;
}

// Rmu: node mass s_i * mu_i[j] accumulated over positions, so nodes shared
// by equally-signed plates add up.
inline SignedNodeWeights r_map(const VectorMeasure& mu, const Condenser& c) {
  require_conformant(mu, c);
  SignedNodeWeights r = SignedNodeWeights::Zero(c.position_count());
  for (int i = 0; i < c.plate_count(); ++i) {
    const double s = c.plates()[i].sign;
    for (int j = 0; j < c.plates()[i].size(); ++j)
      r[c.position_of(i, j)] += s * mu.plate_masses[i][j];
  }
  return r;
}

inline double energy(const SignedNodeWeights& r, const KernelMatrix& km) {
  if (r.size() != km.size())
    throw std::invalid_argument("energy: weights do not match kernel matrix");
  return r.dot(km.entries * r);
}

inline double energy(const VectorMeasure& mu, const KernelMatrix& km, const Condenser& c) {
  return energy(r_map(mu, c), km);
}

// External field f = (f_i). Case I carries explicit per-plate samples in
// (-inf, +inf]; Case II derives f_i = s_i * kappa(., zeta) from a signed
// measure zeta given as position weights.
struct ExternalField {
  enum class Mode { CaseI, CaseII };
  Mode mode = Mode::CaseI;
  std::vector<Vector> samples;  // Case I
  SignedNodeWeights zeta;       // Case II

  static ExternalField case_i(std::vector<Vector> samples) {
    ExternalField F;
    F.mode = Mode::CaseI;
    F.samples = std::move(samples);
    for (const Vector& s : F.samples)
      for (Eigen::Index j = 0; j < s.size(); ++j)
        if (std::isnan(s[j]) || s[j] == -inf)
          throw std::invalid_argument("ExternalField: Case I samples must lie in (-inf, +inf]");
    return F;
  }

  static ExternalField case_ii(SignedNodeWeights zeta) {
    ExternalField F;
    F.mode = Mode::CaseII;
    F.zeta = std::move(zeta);
    return F;
  }

  // The plates' own f vectors as a Case I field.
  static ExternalField from_plates(const Condenser& c) {
    std::vector<Vector> samples;
    for (const Plate& p : c.plates()) samples.push_back(p.f);
    return case_i(samples);
  }
};

// Per-plate field samples f_i[j]; Case II evaluates the zeta potential at
// every plate node through the kernel matrix.
inline std::vector<Vector> field_samples(const ExternalField& F, const KernelMatrix& km,
                                         const Condenser& c) {
  std::vector<Vector> out;
  if (F.mode == ExternalField::Mode::CaseI) {
    if (static_cast<int>(F.samples.size()) != c.plate_count())
      throw std::invalid_argument("field_samples: Case I plate count mismatch");
    for (int i = 0; i < c.plate_count(); ++i) {
      if (F.samples[i].size() != c.plates()[i].size())
        throw std::invalid_argument("field_samples: Case I sample length mismatch");
      out.push_back(F.samples[i]);
    }
    return out;
  }
  if (F.zeta.size() != km.size())
    throw std::invalid_argument("field_samples: zeta does not match kernel matrix");
  const Vector pot = km.entries * F.zeta;
  for (int i = 0; i < c.plate_count(); ++i) {
    const double s = c.plates()[i].sign;
    Vector fi(c.plates()[i].size());
    for (int j = 0; j < fi.size(); ++j) fi[j] = s * pot[c.position_of(i, j)];
    out.push_back(std::move(fi));
  }
  return out;
}

struct InfeasibleSupportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// G(mu) = kappa(mu,mu) + 2<f,mu>. Mass on an f = +inf node is rejected; a
// +inf sample against zero mass contributes nothing.
inline double weighted_energy(const VectorMeasure& mu, const ExternalField& F,
                              const KernelMatrix& km, const Condenser& c) {
  const auto f = field_samples(F, km, c);
  double linear = 0.0;
  for (int i = 0; i < c.plate_count(); ++i)
    for (int j = 0; j < c.plates()[i].size(); ++j) {
      const double m = mu.plate_masses[i][j];
      if (m == 0.0) continue;
      if (f[i][j] == inf)
        throw InfeasibleSupportError("weighted_energy: mass on a node where f = +inf (plate " +
                                     std::to_string(i) + ", node " + std::to_string(j) + ")");
      linear += f[i][j] * m;
    }
  return energy(mu, km, c) + 2.0 * linear;
}

struct SemimetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ||R(mu1 - mu2)||_K. Tiny negative quadratic forms from rounding clamp to
// zero; anything below -1e-10 times the rounding scale |d|^T|K||d| is
// reported as a non-psd diagnostic.
inline double semimetric_distance(const VectorMeasure& mu1, const VectorMeasure& mu2,
                                  const KernelMatrix& km, const Condenser& c) {
  const SignedNodeWeights d = r_map(mu1, c) - r_map(mu2, c);
  const double q = d.dot(km.entries * d);
  if (q < 0.0) {
    const double scale = d.cwiseAbs().dot(km.entries.cwiseAbs() * d.cwiseAbs());
    if (q < -1e-10 * scale)
      throw SemimetricError("semimetric_distance: quadratic form is negative beyond rounding; "
                            "kernel matrix is not psd");
    return 0.0;
  }
  return std::sqrt(q);
}

// CSV exchange format: one row per node, columns plate_index, node_index,
// mass.
inline void write_measure_csv(std::ostream& os, const VectorMeasure& mu) {
  os << "plate_index,node_index,mass\n";
  std::ostringstream row;
  row.precision(17);
  for (int i = 0; i < mu.plate_count(); ++i)
    for (Eigen::Index j = 0; j < mu.plate_masses[i].size(); ++j) {
      row.str("");
      row << i << ',' << j << ',' << mu.plate_masses[i][j] << '\n';
      os << row.str();
    }
}

inline void write_measure_csv(const std::string& path, const VectorMeasure& mu) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_measure_csv: cannot open " + path);
  write_measure_csv(os, mu);
}

inline VectorMeasure read_measure_csv(std::istream& is, const Condenser& c) {
  VectorMeasure mu = VectorMeasure::zeros(c);
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("read_measure_csv: empty input");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    int idx[2];
    for (int k = 0; k < 2; ++k) {
      if (!std::getline(row, cell, ','))
        throw std::runtime_error("read_measure_csv: malformed row: " + line);
      idx[k] = std::stoi(cell);
    }
    if (!std::getline(row, cell))
      throw std::runtime_error("read_measure_csv: malformed row: " + line);
    if (idx[0] < 0 || idx[0] >= c.plate_count() || idx[1] < 0 ||
        idx[1] >= c.plates()[idx[0]].size())
      throw std::runtime_error("read_measure_csv: index out of range: " + line);
    mu.plate_masses[idx[0]][idx[1]] = std::stod(cell);
  }
  return mu;
}

inline VectorMeasure read_measure_csv(const std::string& path, const Condenser& c) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_measure_csv: cannot open " + path);
  return read_measure_csv(is, c);
}

}  // namespace condenser
