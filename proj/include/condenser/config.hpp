#pragma once

// JSON run configuration: kernel and plate descriptions (inline clouds or
// parametric shapes), fields, caps, solver options. Errors name the
// offending field.

#include "condenser/captools.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace condenser {

using ordered_json = nlohmann::ordered_json;

struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string field_, const std::string& msg)
      : std::runtime_error("config error at '" + field_ + "': " + msg), field(std::move(field_)) {}
};

struct RunConfig {
  Kernel kernel;
  int dimension = 3;
  std::vector<Plate> plates;
  ExternalField::Mode field_mode = ExternalField::Mode::CaseI;
  std::vector<std::pair<int, Vector>> zeta_parts;  // Case II: plate index, signed node masses
  SolveOptions solver;
  ordered_json raw;
  std::string config_hash;
};

namespace cfg {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const ordered_json& require(const ordered_json& j, const std::string& path,
                                   const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(join(path, key), "missing");
  return j.at(key);
}

inline double number(const ordered_json& j, const std::string& field, bool allow_inf = false) {
  if (j.is_number()) return j.get<double>();
  if (allow_inf && j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return inf;
  }
  throw ConfigError(field, allow_inf ? "expected a number or \"inf\"" : "expected a number");
}

inline int integer(const ordered_json& j, const std::string& field) {
  if (j.is_number_integer()) return j.get<int>();
  throw ConfigError(field, "expected an integer");
}

inline std::string text(const ordered_json& j, const std::string& field) {
  if (j.is_string()) return j.get<std::string>();
  throw ConfigError(field, "expected a string");
}

inline Vector number_array(const ordered_json& j, const std::string& field,
                           bool allow_inf = false) {
  if (!j.is_array()) throw ConfigError(field, "expected an array of numbers");
  Vector v(j.size());
  for (std::size_t t = 0; t < j.size(); ++t)
    v[t] = number(j[t], field + "[" + std::to_string(t) + "]", allow_inf);
  return v;
}

inline Vector scalar_or_array(const ordered_json& parent, const std::string& key, int n,
                              double dflt, const std::string& path, bool allow_inf = false) {
  if (!parent.contains(key)) return Vector::Constant(n, dflt);
  const ordered_json& j = parent.at(key);
  const std::string field = join(path, key);
  if (j.is_array()) {
    Vector v = number_array(j, field, allow_inf);
    if (v.size() != n)
      throw ConfigError(field, "expected " + std::to_string(n) + " entries, got " +
                                   std::to_string(v.size()));
    return v;
  }
  return Vector::Constant(n, number(j, field, allow_inf));
}

inline Matrix point_matrix(const ordered_json& j, const std::string& field, int dim) {
  if (!j.is_array() || j.empty()) throw ConfigError(field, "expected a nonempty array of points");
  Matrix m(j.size(), dim);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const std::string row_field = field + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != dim)
      throw ConfigError(row_field, "expected a point of dimension " + std::to_string(dim));
    for (int kcol = 0; kcol < dim; ++kcol) m(r, kcol) = number(j[r][kcol], row_field);
  }
  return m;
}

inline RotationProfile profile_from(const ordered_json& j, const std::string& path) {
  RotationProfile prof;
  const std::string fam = text(require(j, path, "family"), join(path, "family"));
  if (fam == "power_law") prof.family = ProfileFamily::PowerLaw;
  else if (fam == "stretched_exp") prof.family = ProfileFamily::StretchedExp;
  else throw ConfigError(join(path, "family"), "expected \"power_law\" or \"stretched_exp\"");
  prof.s = number(require(j, path, "s"), join(path, "s"));
  try {
    prof.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(join(path, "s"), e.what());
  }
  return prof;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace cfg

inline RunConfig load_config_json(const ordered_json& root, const std::string& raw_bytes) {
  RunConfig cfg;
  cfg.raw = root;
  {
    std::ostringstream hex;
    hex << std::hex << cfg::fnv1a64(raw_bytes);
    cfg.config_hash = hex.str();
  }

  if (root.contains("dimension"))
    cfg.dimension = cfg::integer(root.at("dimension"), "dimension");
  if (cfg.dimension != 2 && cfg.dimension != 3)
    throw ConfigError("dimension", "must be 2 or 3");

  const ordered_json& jk = cfg::require(root, "", "kernel");
  const std::string family = cfg::text(cfg::require(jk, "kernel", "family"), "kernel.family");
  if (family == "riesz") {
    cfg.kernel.family = KernelFamily::Riesz;
    cfg.kernel.alpha = cfg::number(cfg::require(jk, "kernel", "alpha"), "kernel.alpha");
  } else if (family == "log") {
    cfg.kernel.family = KernelFamily::Logarithmic;
  } else {
    throw ConfigError("kernel.family", "expected \"riesz\" or \"log\"");
  }
  cfg.kernel.n = cfg.dimension;
  try {
    cfg.kernel.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("kernel", e.what());
  }

  if (root.contains("solver")) {
    const ordered_json& js = root.at("solver");
    if (js.contains("tol")) cfg.solver.tol = cfg::number(js.at("tol"), "solver.tol");
    if (js.contains("max_iters"))
      cfg.solver.max_iters = cfg::integer(js.at("max_iters"), "solver.max_iters");
    if (js.contains("seed"))
      cfg.solver.seed = static_cast<unsigned>(cfg::integer(js.at("seed"), "solver.seed"));
  }

  if (root.contains("plates")) {
    const ordered_json& jp = root.at("plates");
    if (!jp.is_array()) throw ConfigError("plates", "expected an array");
    for (std::size_t i = 0; i < jp.size(); ++i) {
      const std::string path = "plates[" + std::to_string(i) + "]";
      const ordered_json& item = jp[i];
      if (!item.is_object()) throw ConfigError(path, "expected an object");

      int shapes = 0;
      for (const char* key : {"points", "sphere", "ball_shell", "rotation_body"})
        if (item.contains(key)) ++shapes;
      if (shapes != 1)
        throw ConfigError(path, "expected exactly one of points, sphere, ball_shell, "
                                "rotation_body");

      Plate plate;
      if (item.contains("points")) {
        Matrix nodes = cfg::point_matrix(item.at("points"), cfg::join(path, "points"),
                                         cfg.dimension);
        const int n = static_cast<int>(nodes.rows());
        Vector w = cfg::scalar_or_array(item, "cell_weights", n, 1.0, path);
        plate = make_plate(std::move(nodes), std::move(w));
        if (item.contains("self_radii")) {
          Vector r = cfg::scalar_or_array(item, "self_radii", n, 0.0, path);
          plate.self_radii = std::move(r);
        }
      } else if (item.contains("sphere") || item.contains("ball_shell")) {
        const char* key = item.contains("sphere") ? "sphere" : "ball_shell";
        const std::string spath = cfg::join(path, key);
        const ordered_json& js = item.at(key);
        Vector center = Vector::Zero(cfg.dimension);
        if (js.contains("center")) {
          center = cfg::number_array(js.at("center"), cfg::join(spath, "center"));
          if (center.size() != cfg.dimension)
            throw ConfigError(cfg::join(spath, "center"), "dimension mismatch");
        }
        const double radius = cfg::number(cfg::require(js, spath, "radius"),
                                          cfg::join(spath, "radius"));
        const int n_nodes = cfg::integer(cfg::require(js, spath, "n_nodes"),
                                         cfg::join(spath, "n_nodes"));
        try {
          plate = build_sphere_plate(center, radius, n_nodes);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(spath, e.what());
        }
      } else {
        const std::string rpath = cfg::join(path, "rotation_body");
        const ordered_json& jr = item.at("rotation_body");
        const RotationProfile prof = cfg::profile_from(jr, rpath);
        const double x_max = cfg::number(cfg::require(jr, rpath, "x_max"),
                                         cfg::join(rpath, "x_max"));
        const int n_axial = cfg::integer(cfg::require(jr, rpath, "n_axial"),
                                         cfg::join(rpath, "n_axial"));
        const int n_angular = cfg::integer(cfg::require(jr, rpath, "n_angular"),
                                           cfg::join(rpath, "n_angular"));
        if (cfg.dimension != 3)
          throw ConfigError(rpath, "rotation bodies require dimension 3");
        try {
          plate = build_rotation_body(prof, x_max, n_axial, n_angular);
        } catch (const std::invalid_argument& e) {
          throw ConfigError(rpath, e.what());
        }
      }

      const int n = plate.size();
      if (item.contains("sign")) {
        plate.sign = cfg::integer(item.at("sign"), cfg::join(path, "sign"));
        if (plate.sign != 1 && plate.sign != -1)
          throw ConfigError(cfg::join(path, "sign"), "expected 1 or -1");
      }
      if (item.contains("a")) plate.a = cfg::number(item.at("a"), cfg::join(path, "a"));
      plate.g = cfg::scalar_or_array(item, "g", n, 1.0, path);
      plate.f = cfg::scalar_or_array(item, "f", n, 0.0, path, /*allow_inf=*/true);

      if (item.contains("cap")) {
        const ordered_json& jc = item.at("cap");
        const std::string cpath = cfg::join(path, "cap");
        if (jc.is_object()) {
          const double scale = cfg::number(cfg::require(jc, cpath, "equilibrium_scale"),
                                           cfg::join(cpath, "equilibrium_scale"));
          Plate unit = plate;
          unit.g = Vector::Ones(n);
          CapacityResult cr;
          try {
            cr = capacity(unit, cfg.kernel, cfg.solver);
          } catch (const std::exception& e) {
            throw ConfigError(cpath, std::string("equilibrium cap failed: ") + e.what());
          }
          plate.cap = scale * cr.unit_minimizer.plate_masses[0];
        } else {
          plate.cap = cfg::scalar_or_array(item, "cap", n, 0.0, path);
        }
      }
      cfg.plates.push_back(std::move(plate));
    }
  }

  if (root.contains("field")) {
    const ordered_json& jf = root.at("field");
    const std::string mode = cfg::text(cfg::require(jf, "field", "case"), "field.case");
    if (mode == "I") {
      cfg.field_mode = ExternalField::Mode::CaseI;
    } else if (mode == "II") {
      cfg.field_mode = ExternalField::Mode::CaseII;
      const ordered_json& jz = cfg::require(jf, "field", "zeta");
      if (!jz.is_array()) throw ConfigError("field.zeta", "expected an array");
      for (std::size_t t = 0; t < jz.size(); ++t) {
        const std::string zpath = "field.zeta[" + std::to_string(t) + "]";
        const int plate_idx = cfg::integer(cfg::require(jz[t], zpath, "plate"),
                                           cfg::join(zpath, "plate"));
        if (plate_idx < 0 || plate_idx >= static_cast<int>(cfg.plates.size()))
          throw ConfigError(cfg::join(zpath, "plate"), "plate index out of range");
        Vector masses = cfg::number_array(cfg::require(jz[t], zpath, "masses"),
                                          cfg::join(zpath, "masses"));
        if (masses.size() != cfg.plates[plate_idx].size())
          throw ConfigError(cfg::join(zpath, "masses"), "length does not match the plate");
        cfg.zeta_parts.emplace_back(plate_idx, std::move(masses));
      }
    } else {
      throw ConfigError("field.case", "expected \"I\" or \"II\"");
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("<config>", "cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  const std::string bytes = buf.str();
  ordered_json root;
  try {
    root = ordered_json::parse(bytes);
  } catch (const ordered_json::parse_error& e) {
    throw ConfigError("<config>", e.what());
  }
  return load_config_json(root, bytes);
}

inline Condenser make_condenser(const RunConfig& cfg) {
  if (cfg.plates.empty()) throw ConfigError("plates", "at least one plate required");
  try {
    return Condenser(cfg.plates, cfg.dimension);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("plates", e.what());
  }
}

inline ExternalField make_field(const RunConfig& cfg, const Condenser& c) {
  if (cfg.field_mode == ExternalField::Mode::CaseI) return ExternalField::from_plates(c);
  SignedNodeWeights zeta = SignedNodeWeights::Zero(c.position_count());
  for (const auto& [plate_idx, masses] : cfg.zeta_parts)
    for (int j = 0; j < masses.size(); ++j) zeta[c.position_of(plate_idx, j)] += masses[j];
  return ExternalField::case_ii(std::move(zeta));
}

}  // namespace condenser
