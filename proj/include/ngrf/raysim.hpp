// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image-method ray simulator over planar scenes: line of sight plus one
// reflection per visible plane, free-space loss, Fresnel reflection with a
// vertically polarized transmitter, and URA/ULA steering vectors. Produces
// the ground-truth channel matrices the models train against.

#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include "ngrf/dataset.hpp"
#include "ngrf/parallel.hpp"
#include "ngrf/scene.hpp"

namespace ngrf {

constexpr double kCubicFeetPerCubicMeter = 35.3146667;
constexpr double kPlaneClearance = 0.1;  // meters, sampling keep-out
constexpr int kMaxPlacementAttempts = 100;

inline double fspl_db(double d, double f) {
  if (d <= 0.0 || f <= 0.0)
    throw contract_error("fspl_db needs positive distance and frequency");
  return 20.0 * std::log10(d) + 20.0 * std::log10(f) +
         20.0 * std::log10(4.0 * kPi / kSpeedOfLight);
}

// Reflection coefficients with the incidence angle measured from the
// surface (grazing convention). Naming follows the source equations:
// gamma_p carries the bare sin(theta), gamma_s the permittivity-weighted one.
inline std::pair<Complex, Complex> fresnel_coeffs(double theta_i,
                                                  Complex eps_r) {
  double st = std::sin(theta_i), ct = std::cos(theta_i);
  Complex root = std::sqrt(eps_r - ct * ct);  // principal branch
  Complex gp = (st - root) / (st + root);
  Complex gs = (eps_r * st - root) / (eps_r * st + root);
  return {gp, gs};
}

// a[k] = exp(+j (2*pi*f/c) <elem_k, k_hat>) with k_hat the unit propagation
// direction [cos(az)cos(el), sin(az)cos(el), sin(el)].
inline std::vector<Complex> steering_vector(double f, const Vec3& dir,
                                            const std::vector<Vec3>& elements) {
  double k = 2.0 * kPi * f / kSpeedOfLight;
  std::vector<Complex> out(elements.size());
  for (size_t i = 0; i < elements.size(); ++i)
    out[i] = std::polar(1.0, k * elements[i].dot(dir));
  return out;
}

inline std::vector<Complex> steering_vector_angles(
    double f, double azimuth, double elevation,
    const std::vector<Vec3>& elements) {
  Vec3 dir{std::cos(azimuth) * std::cos(elevation),
           std::sin(azimuth) * std::cos(elevation), std::sin(elevation)};
  return steering_vector(f, dir, elements);
}

struct RayPath {
  enum Kind { kLineOfSight, kSingleBounce };
  Kind kind = kLineOfSight;
  double length = 0.0;     // meters
  double delay = 0.0;      // seconds
  double amplitude = 0.0;  // linear
  double phase = 0.0;      // radians, reflection phase included
  Vec3 departure;          // unit, away from the transmitter
  Vec3 arrival;            // unit, from the receiver toward the last hop
};

namespace detail {

// transmit polarization is vertical; decompose it against the plane of
// incidence and weight the two coefficients by the squared projections
inline Complex effective_reflection(const Vec3& dir, const Vec3& normal,
                                    Complex gp, Complex gs) {
  Vec3 ev = Vec3{0, 0, 1} - dir * dir.z;
  if (ev.norm() < 1e-9) ev = Vec3{1, 0, 0} - dir * dir.x;
  ev = ev.normalized();
  Vec3 sh = dir.cross(normal);
  double sn = sh.norm();
  if (sn < 1e-9) return gs;  // normal incidence: decomposition is arbitrary
  sh = sh * (1.0 / sn);
  Vec3 ph = sh.cross(dir);
  double cs = ev.dot(sh), cp = ev.dot(ph);
  return gs * (cs * cs) + gp * (cp * cp);
}

inline bool segment_blocked(const Scene& s, const Vec3& a, const Vec3& b,
                            const Plane* skip) {
  for (const auto& p : s.planes) {
    if (&p == skip) continue;
    double da = p.side(a), db = p.side(b);
    if (da * db >= 0.0) continue;  // no strict crossing
    double t = da / (da - db);
    Vec3 hit = a + (b - a) * t;
    if (p.contains(hit)) return true;
  }
  return false;
}

}  // namespace detail

inline std::vector<RayPath> trace(const Scene& s, const Vec3& p_tx,
                                  const Vec3& p_rx) {
  Vec3 los = p_rx - p_tx;
  double d_los = los.norm();
  if (d_los < 1e-9)
    throw contract_error("trace: transmitter and receiver coincide");
  for (const auto& p : s.planes)
    if (std::abs(p.side(p_tx)) < 1e-12 && p.contains(p_tx))
      throw data_error("trace: transmitter lies on a reflector");

  std::vector<RayPath> paths;
  double f = s.carrier_hz;

  if (!detail::segment_blocked(s, p_tx, p_rx, nullptr)) {
    RayPath lp;
    lp.kind = RayPath::kLineOfSight;
    lp.length = d_los;
    lp.delay = d_los / kSpeedOfLight;
    lp.amplitude = std::pow(10.0, -fspl_db(d_los, f) / 20.0);
    lp.phase = -2.0 * kPi * f * lp.delay;
    lp.departure = los * (1.0 / d_los);
    lp.arrival = lp.departure * -1.0;
    paths.push_back(lp);
  }

  for (const auto& plane : s.planes) {
    double side_tx = plane.side(p_tx), side_rx = plane.side(p_rx);
    if (side_tx * side_rx <= 0.0) continue;  // reflection needs one side
    Vec3 image = p_tx - plane.normal * (2.0 * side_tx);
    double di = -side_tx;  // image sits mirrored across the plane
    double t = di / (di - side_rx);
    Vec3 refl = image + (p_rx - image) * t;
    if (!plane.contains(refl)) continue;
    if (detail::segment_blocked(s, p_tx, refl, &plane)) continue;
    if (detail::segment_blocked(s, refl, p_rx, &plane)) continue;

    double len = (refl - p_tx).norm() + (p_rx - refl).norm();
    Vec3 dir_in = (refl - p_tx).normalized();
    double grazing = std::asin(std::min(1.0, std::abs(dir_in.dot(plane.normal))));
    auto [gp, gs] = fresnel_coeffs(grazing, plane.eps_r);
    Complex gamma = detail::effective_reflection(dir_in, plane.normal, gp, gs);

    RayPath rp;
    rp.kind = RayPath::kSingleBounce;
    rp.length = len;
    rp.delay = len / kSpeedOfLight;
    rp.amplitude = std::pow(10.0, -fspl_db(len, f) / 20.0) * std::abs(gamma);
    rp.phase = -2.0 * kPi * f * rp.delay + std::arg(gamma);
    rp.departure = dir_in;
    rp.arrival = (refl - p_rx).normalized();
    paths.push_back(rp);
  }
  return paths;
}

// H[t][r] = sum_l a_l e^{j phi_l} conj(a_T[t]) a_R[r]
inline ChannelMatrix assemble_channel(const Scene& s,
                                      const std::vector<RayPath>& paths) {
  if (paths.empty()) throw contract_error("assemble_channel: no paths");
  auto tx_el = s.tx_elements();
  auto rx_el = s.rx_elements();
  ChannelMatrix H(tx_el.size(), rx_el.size());
  for (const auto& p : paths) {
    auto aT = steering_vector(s.carrier_hz, p.departure, tx_el);
    auto aR = steering_vector(s.carrier_hz, p.arrival, rx_el);
    Complex scalar = std::polar(p.amplitude, p.phase);
    for (size_t t = 0; t < tx_el.size(); ++t) {
      Complex left = scalar * std::conj(aT[t]);
      for (size_t r = 0; r < rx_el.size(); ++r)
        H.at(t, r) += left * aR[r];
    }
  }
  return H;
}

// zero channel when the receiver is fully shadowed
inline ChannelMatrix simulate(const Scene& s, const Vec3& p_tx,
                              const Vec3& p_rx, size_t* path_count = nullptr) {
  auto paths = trace(s, p_tx, p_rx);
  if (path_count) *path_count = paths.size();
  if (paths.empty()) return ChannelMatrix(s.nt(), s.nr());
  return assemble_channel(s, paths);
}

// distance from a point to a finite rectangular reflector
inline double plane_distance(const Plane& p, const Vec3& x) {
  Vec3 d = x - p.point;
  double dn = d.dot(p.normal);
  double du = std::max(0.0, std::abs(d.dot(p.u_axis)) - p.extent_u);
  double dv = std::max(0.0, std::abs(d.dot(p.v_axis)) - p.extent_v);
  return std::sqrt(dn * dn + du * du + dv * dv);
}

inline double box_volume_ft3(const Bounds& b) {
  Vec3 e = b.hi - b.lo;
  return e.x * e.y * e.z * kCubicFeetPerCubicMeter;
}

inline size_t samples_for_density(const Bounds& b, double per_ft3) {
  if (per_ft3 <= 0) throw contract_error("density must be positive");
  double n = per_ft3 * box_volume_ft3(b);
  size_t count = static_cast<size_t>(std::llround(n));
  return count > 0 ? count : 1;
}

// Uniform receiver placement with a keep-out margin around reflectors.
// Per-sample RNG streams keep the output independent of thread count.
inline Dataset generate_dataset(const Scene& s, size_t n_samples,
                                uint64_t seed) {
  if (n_samples < 1) throw contract_error("need at least one sample");
  for (const auto& p : s.planes)
    if (plane_distance(p, s.tx_pos) < kPlaneClearance)
      throw data_error("transmitter is too close to a reflector");

  Dataset ds;
  ds.nt = s.nt();
  ds.nr = s.nr();
  ds.carrier_hz = s.carrier_hz;
  ds.samples.resize(n_samples);
  ds.meta["bounds"] = {{"lo", {s.bounds.lo.x, s.bounds.lo.y, s.bounds.lo.z}},
                       {"hi", {s.bounds.hi.x, s.bounds.hi.y, s.bounds.hi.z}}};
  ds.meta["tx_pos"] = {s.tx_pos.x, s.tx_pos.y, s.tx_pos.z};
  ds.meta["tx_array"] = {{"type", "ura"},
                         {"rows", s.tx_array.rows},
                         {"cols", s.tx_array.cols},
                         {"spacing_lambda", s.tx_array.spacing_lambda}};
  ds.meta["rx_array"] = {{"type", "ula"},
                         {"n", s.rx_array.n},
                         {"spacing_lambda", s.rx_array.spacing_lambda}};
  ds.meta["density_per_ft3"] =
      static_cast<double>(n_samples) / box_volume_ft3(s.bounds);

  std::atomic<bool> failed{false};
  parallel_chunks(n_samples, 16, [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) {
      Rng rng = Rng::stream(seed, i);
      Vec3 p;
      bool placed = false;
      for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
        p = {rng.uniform(s.bounds.lo.x, s.bounds.hi.x),
             rng.uniform(s.bounds.lo.y, s.bounds.hi.y),
             rng.uniform(s.bounds.lo.z, s.bounds.hi.z)};
        bool clear = true;
        for (const auto& pl : s.planes)
          if (plane_distance(pl, p) < kPlaneClearance) {
            clear = false;
            break;
          }
        if (clear && (p - s.tx_pos).norm() > 1e-6) {
          placed = true;
          break;
        }
      }
      if (!placed) {
        failed.store(true);
        return;
      }
      Sample& smp = ds.samples[i];
      smp.p_tx = s.tx_pos;
      smp.p_rx = p;
      smp.H = simulate(s, s.tx_pos, p);
    }
  });
  if (failed.load())
    throw data_error("failed to place a receiver clear of the reflectors");
  return ds;
}

}  // namespace ngrf
