// SPDX-License-Identifier: Apache-2.0
#pragma once

// Planar scene description for the ray simulator: rectangular reflectors
// with complex permittivity, a URA transmit array, a ULA receive array,
// and a fixed transmitter position. Loaded from a small JSON schema.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/common.hpp"
#include "ngrf/gaussian_field.hpp"
#include "ngrf/math.hpp"

namespace ngrf {

// representative indoor materials near 2.4 GHz
inline Complex material_eps(const std::string& name) {
  if (name == "concrete") return {5.31, -0.28};
  if (name == "glass") return {6.27, -0.17};
  if (name == "wood") return {1.99, -0.19};
  throw data_error("unknown material: " + name);
}

struct Plane {
  Vec3 point;
  Vec3 normal;  // unit
  double extent_u = 0.0, extent_v = 0.0;  // half extents, meters
  Complex eps_r{1.0, 0.0};
  Vec3 u_axis, v_axis;  // derived in-plane frame

  void finish() {
    double n = normal.norm();
    if (n < 1e-12) throw data_error("plane normal is degenerate");
    normal = normal * (1.0 / n);
    // pick a reference axis that is never parallel to the normal
    Vec3 ref = std::abs(normal.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    u_axis = ref.cross(normal).normalized();
    v_axis = normal.cross(u_axis);
  }

  // signed distance along the normal
  double side(const Vec3& p) const { return (p - point).dot(normal); }

  bool contains(const Vec3& p) const {
    Vec3 d = p - point;
    return std::abs(d.dot(u_axis)) <= extent_u + 1e-12 &&
           std::abs(d.dot(v_axis)) <= extent_v + 1e-12;
  }
};

struct UraSpec {
  size_t rows = 1, cols = 1;
  double spacing_lambda = 0.5;
  size_t count() const { return rows * cols; }
};

struct UlaSpec {
  size_t n = 1;
  double spacing_lambda = 0.5;
};

struct Scene {
  double carrier_hz = 2.4e9;
  Bounds bounds;
  std::vector<Plane> planes;
  UraSpec tx_array;
  UlaSpec rx_array;
  Vec3 tx_pos;

  double wavelength() const { return kSpeedOfLight / carrier_hz; }
  size_t nt() const { return tx_array.count(); }
  size_t nr() const { return rx_array.n; }

  // URA elements on the xy plane, reference element at the origin
  std::vector<Vec3> tx_elements() const {
    double d = tx_array.spacing_lambda * wavelength();
    std::vector<Vec3> out;
    out.reserve(tx_array.count());
    for (size_t r = 0; r < tx_array.rows; ++r)
      for (size_t c = 0; c < tx_array.cols; ++c)
        out.push_back({static_cast<double>(r) * d,
                       static_cast<double>(c) * d, 0.0});
    return out;
  }

  // ULA along x, reference element at the origin
  std::vector<Vec3> rx_elements() const {
    double d = rx_array.spacing_lambda * wavelength();
    std::vector<Vec3> out;
    out.reserve(rx_array.n);
    for (size_t i = 0; i < rx_array.n; ++i)
      out.push_back({static_cast<double>(i) * d, 0.0, 0.0});
    return out;
  }
};

inline Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3)
    throw data_error("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.carrier_hz = j.at("carrier_hz").get<double>();
  if (s.carrier_hz <= 0) throw data_error("carrier_hz must be positive");

  const auto& b = j.at("bounds");
  s.bounds.lo = vec3_from_json(b.at("lo"));
  s.bounds.hi = vec3_from_json(b.at("hi"));
  for (int k = 0; k < 3; ++k)
    if (!(s.bounds.lo[k] < s.bounds.hi[k]))
      throw data_error("bounds must have positive extent on every axis");

  if (j.contains("planes"))
    for (const auto& pj : j.at("planes")) {
      Plane p;
      p.point = vec3_from_json(pj.at("point"));
      p.normal = vec3_from_json(pj.at("normal"));
      const auto& e = pj.at("extent_uv");
      p.extent_u = e[0].get<double>();
      p.extent_v = e[1].get<double>();
      if (p.extent_u <= 0 || p.extent_v <= 0)
        throw data_error("plane extent must be positive");
      if (pj.contains("material")) {
        p.eps_r = material_eps(pj.at("material").get<std::string>());
      } else {
        p.eps_r = Complex(pj.at("eps_re").get<double>(),
                          pj.value("eps_im", 0.0));
      }
      if (p.eps_r.real() < 1.0)
        throw data_error("relative permittivity must have Re >= 1");
      p.finish();
      s.planes.push_back(p);
    }

  if (j.contains("tx_array")) {
    const auto& t = j.at("tx_array");
    if (t.value("type", "ura") != "ura")
      throw data_error("tx_array type must be 'ura'");
    s.tx_array.rows = t.at("rows").get<size_t>();
    s.tx_array.cols = t.at("cols").get<size_t>();
    s.tx_array.spacing_lambda = t.value("spacing_lambda", 0.5);
    if (s.tx_array.rows < 1 || s.tx_array.cols < 1 ||
        s.tx_array.spacing_lambda <= 0)
      throw data_error("bad tx_array");
  }
  if (j.contains("rx_array")) {
    const auto& r = j.at("rx_array");
    if (r.value("type", "ula") != "ula")
      throw data_error("rx_array type must be 'ula'");
    s.rx_array.n = r.at("n").get<size_t>();
    s.rx_array.spacing_lambda = r.value("spacing_lambda", 0.5);
    if (s.rx_array.n < 1 || s.rx_array.spacing_lambda <= 0)
      throw data_error("bad rx_array");
  }

  if (j.contains("tx_pos")) {
    s.tx_pos = vec3_from_json(j.at("tx_pos"));
  } else {
    // center of the floor plan at 80% of the box height
    Vec3 c = s.bounds.center();
    s.tx_pos = {c.x, c.y,
                s.bounds.lo.z + 0.8 * (s.bounds.hi.z - s.bounds.lo.z)};
  }
  return s;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw data_error("cannot open scene file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("bad scene json: ") + e.what());
  }
  try {
    return scene_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("bad scene schema: ") + e.what());
  }
}

}  // namespace ngrf
