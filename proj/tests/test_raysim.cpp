// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ngrf/raysim.hpp"

using namespace ngrf;

namespace {

Scene empty_box(size_t nt_rows = 1, size_t nt_cols = 1, size_t nr = 1) {
  Scene s;
  s.carrier_hz = 2.4e9;
  s.bounds = {{0, 0, 0}, {10, 10, 3}};
  s.tx_array.rows = nt_rows;
  s.tx_array.cols = nt_cols;
  s.rx_array.n = nr;
  s.tx_pos = {5, 5, 2.4};
  return s;
}

Plane make_plane(Vec3 point, Vec3 normal, double eu, double ev,
                 Complex eps = {5.31, -0.28}) {
  Plane p;
  p.point = point;
  p.normal = normal;
  p.extent_u = eu;
  p.extent_v = ev;
  p.eps_r = eps;
  p.finish();
  return p;
}

}  // namespace

TEST_CASE("free-space path loss hits the textbook anchors") {
  // 1 m at 1 GHz; same constant as the km/MHz form of the formula
  REQUIRE(fspl_db(1.0, 1e9) == Catch::Approx(32.44778).margin(1e-4));
  // decade of distance adds exactly 20 dB
  REQUIRE(fspl_db(10.0, 1e9) - fspl_db(1.0, 1e9) ==
          Catch::Approx(20.0).margin(1e-12));
  // doubling frequency adds 20*log10(2)
  REQUIRE(fspl_db(1.0, 2e9) - fspl_db(1.0, 1e9) ==
          Catch::Approx(20.0 * std::log10(2.0)).margin(1e-12));
  REQUIRE_THROWS_AS(fspl_db(0.0, 1e9), contract_error);
  REQUIRE_THROWS_AS(fspl_db(1.0, -1.0), contract_error);
}

TEST_CASE("fresnel coefficients vanish without impedance contrast") {
  for (double theta : {0.1, 0.5, 1.0, kPi / 2}) {
    auto [gp, gs] = fresnel_coeffs(theta, {1.0, 0.0});
    REQUIRE(std::abs(gp) < 1e-12);
    REQUIRE(std::abs(gs) < 1e-12);
  }
}

TEST_CASE("fresnel normal incidence matches the closed form") {
  // theta measured from the surface, so pi/2 is normal incidence
  auto [gp, gs] = fresnel_coeffs(kPi / 2, {4.0, 0.0});
  REQUIRE(gp.real() == Catch::Approx(-1.0 / 3.0).margin(1e-12));
  REQUIRE(gp.imag() == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(gs.real() == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("fresnel magnitudes stay below one for lossless dielectrics") {
  for (double eps : {1.0, 1.5, 2.0, 4.0, 9.0, 16.0}) {
    for (int k = 1; k <= 32; ++k) {
      double theta = (kPi / 2) * k / 32.0;
      auto [gp, gs] = fresnel_coeffs(theta, {eps, 0.0});
      REQUIRE(std::abs(gp) <= 1.0 + 1e-12);
      REQUIRE(std::abs(gs) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("amplitude convention equals lambda over 4 pi d") {
  for (double d : {0.5, 1.0, 3.7, 12.0}) {
    for (double f : {1e9, 2.4e9, 6e9}) {
      double from_db = std::pow(10.0, -fspl_db(d, f) / 20.0);
      double direct = kSpeedOfLight / (4.0 * kPi * d * f);
      REQUIRE(std::abs(from_db - direct) <= 1e-12 * direct);
    }
  }
}

TEST_CASE("steering vectors are pure phases with the broadside identity") {
  std::vector<Vec3> one = {{0, 0, 0}};
  auto a = steering_vector(2.4e9, {0.3, 0.8, 0.52}, one);
  REQUIRE(a.size() == 1);
  REQUIRE(a[0] == Complex(1.0, 0.0));

  // two-element half-wavelength ULA along x, wave from broadside (y)
  double lambda = kSpeedOfLight / 2.4e9;
  std::vector<Vec3> ula = {{0, 0, 0}, {lambda / 2, 0, 0}};
  auto b = steering_vector(2.4e9, {0, 1, 0}, ula);
  REQUIRE(std::abs(b[0] - b[1]) < 1e-12);

  std::vector<Vec3> many = {{0, 0, 0}, {0.1, 0, 0}, {0.1, 0.1, 0}, {0, 0.2, 0.3}};
  auto c = steering_vector(6e9, Vec3{0.48, -0.6, 0.64}.normalized(), many);
  for (const auto& v : c) REQUIRE(std::abs(std::abs(v) - 1.0) < 1e-12);

  // angle form reconstructs the unit direction
  double az = 0.7, el = -0.4;
  Vec3 dir{std::cos(az) * std::cos(el), std::sin(az) * std::cos(el),
           std::sin(el)};
  auto d1 = steering_vector_angles(2.4e9, az, el, many);
  auto d2 = steering_vector(2.4e9, dir, many);
  for (size_t i = 0; i < many.size(); ++i)
    REQUIRE(std::abs(d1[i] - d2[i]) < 1e-12);
}

TEST_CASE("empty scene yields exactly the free-space path") {
  Scene s = empty_box();
  Vec3 rx{2, 3, 1};
  auto paths = trace(s, s.tx_pos, rx);
  REQUIRE(paths.size() == 1);
  REQUIRE(paths[0].kind == RayPath::kLineOfSight);

  double d = (rx - s.tx_pos).norm();
  double lambda = s.wavelength();
  REQUIRE(paths[0].length == Catch::Approx(d).margin(1e-12));
  REQUIRE(paths[0].amplitude ==
          Catch::Approx(lambda / (4.0 * kPi * d)).epsilon(1e-12));
  REQUIRE(paths[0].phase == Catch::Approx(-2.0 * kPi * d / lambda).epsilon(1e-12));

  // SISO closed form
  ChannelMatrix H = simulate(s, s.tx_pos, rx);
  Complex expect = std::polar(lambda / (4.0 * kPi * d), -2.0 * kPi * d / lambda);
  REQUIRE(std::abs(H.at(0, 0) - expect) < 1e-15);
}

TEST_CASE("mirror image controls the reflected path length") {
  Scene s = empty_box();
  // floor-like plane at z=0 spanning the box, nearly lossless contrast
  s.planes.push_back(make_plane({5, 5, 0}, {0, 0, 1}, 20, 20, {1e9, 0.0}));
  Vec3 tx{3, 5, 1.5}, rx{7, 5, 1.2};
  auto paths = trace(s, tx, rx);
  REQUIRE(paths.size() == 2);

  Vec3 image{3, 5, -1.5};
  double expect = (image - rx).norm();
  const RayPath* bounce = nullptr;
  for (const auto& p : paths)
    if (p.kind == RayPath::kSingleBounce) bounce = &p;
  REQUIRE(bounce != nullptr);
  REQUIRE(bounce->length == Catch::Approx(expect).epsilon(1e-12));
  // |Gamma| -> 1 for the huge permittivity
  double fs = std::pow(10.0, -fspl_db(bounce->length, s.carrier_hz) / 20.0);
  REQUIRE(bounce->amplitude == Catch::Approx(fs).epsilon(1e-3));
}

TEST_CASE("an occluding plane removes the line of sight") {
  Scene s = empty_box();
  s.planes.push_back(make_plane({5, 5, 1.5}, {1, 0, 0}, 2, 2));
  Vec3 tx{3, 5, 1.5}, rx{7, 5, 1.5};
  auto paths = trace(s, tx, rx);
  for (const auto& p : paths) REQUIRE(p.kind != RayPath::kLineOfSight);
  // same-side reflection is impossible, so the channel is dark
  REQUIRE(paths.empty());
  ChannelMatrix H = simulate(s, tx, rx);
  for (const auto& c : H.h) REQUIRE(std::abs(c) == 0.0);

  // shifting the receiver off the blocker restores the direct path
  Vec3 rx_clear{7, 9.5, 1.5};
  auto open = trace(s, tx, rx_clear);
  bool has_los = false;
  for (const auto& p : open) has_los |= (p.kind == RayPath::kLineOfSight);
  REQUIRE(has_los);
}

TEST_CASE("path lengths are reciprocal") {
  Scene s = empty_box();
  s.planes.push_back(make_plane({5, 5, 0}, {0, 0, 1}, 20, 20));
  s.planes.push_back(make_plane({0, 5, 1.5}, {1, 0, 0}, 6, 6, {6.27, -0.17}));
  s.planes.push_back(make_plane({5, 10, 1.5}, {0, -1, 0}, 6, 6, {1.99, -0.19}));
  Vec3 a{2, 3, 1.0}, b{8, 7, 2.2};

  auto forward = trace(s, a, b);
  auto backward = trace(s, b, a);
  REQUIRE(forward.size() == backward.size());
  std::vector<double> lf, lb;
  for (const auto& p : forward) lf.push_back(p.length);
  for (const auto& p : backward) lb.push_back(p.length);
  std::sort(lf.begin(), lf.end());
  std::sort(lb.begin(), lb.end());
  for (size_t i = 0; i < lf.size(); ++i)
    REQUIRE(std::abs(lf[i] - lb[i]) < 1e-9);
}

TEST_CASE("a lossy reflector never brightens existing paths") {
  Scene base = empty_box();
  base.planes.push_back(make_plane({5, 5, 0}, {0, 0, 1}, 20, 20));
  Vec3 tx{3, 4, 1.4}, rx{7, 6, 1.8};
  auto before = trace(base, tx, rx);

  Scene more = base;
  // far corner reflector that cannot shadow the existing segments
  more.planes.push_back(make_plane({9.9, 0.1, 1.5}, {-1, 0, 0}, 0.5, 0.5,
                                   {1.99, -0.19}));
  auto after = trace(more, tx, rx);
  REQUIRE(after.size() >= before.size());
  for (const auto& old : before) {
    bool found = false;
    for (const auto& now : after)
      if (std::abs(now.length - old.length) < 1e-9) {
        REQUIRE(now.amplitude <= old.amplitude + 1e-15);
        found = true;
      }
    REQUIRE(found);
  }
  // any reflected path is weaker than free space over the same distance
  for (const auto& p : after)
    if (p.kind == RayPath::kSingleBounce)
      REQUIRE(p.amplitude <=
              std::pow(10.0, -fspl_db(p.length, more.carrier_hz) / 20.0) + 1e-15);
}

TEST_CASE("single-path MIMO channels have rank one") {
  Scene s = empty_box(2, 2, 3);
  Vec3 rx{2.5, 7.5, 1.0};
  ChannelMatrix H = simulate(s, s.tx_pos, rx);
  REQUIRE(H.nt == 4);
  REQUIRE(H.nr == 3);
  for (size_t t1 = 0; t1 < H.nt; ++t1)
    for (size_t t2 = t1 + 1; t2 < H.nt; ++t2)
      for (size_t r1 = 0; r1 < H.nr; ++r1)
        for (size_t r2 = r1 + 1; r2 < H.nr; ++r2) {
          Complex minor =
              H.at(t1, r1) * H.at(t2, r2) - H.at(t1, r2) * H.at(t2, r1);
          double scale = std::abs(H.at(t1, r1) * H.at(t2, r2)) +
                         std::abs(H.at(t1, r2) * H.at(t2, r1));
          REQUIRE(std::abs(minor) <= 1e-12 * scale);
        }
}

TEST_CASE("two equal paths half a cycle apart cancel") {
  Scene s = empty_box();
  RayPath p1, p2;
  p1.amplitude = p2.amplitude = 0.01;
  p1.phase = 0.4;
  p2.phase = 0.4 + kPi;
  p1.departure = p2.departure = Vec3{1, 0, 0};
  p1.arrival = p2.arrival = Vec3{-1, 0, 0};
  ChannelMatrix H = assemble_channel(s, {p1, p2});
  REQUIRE(std::abs(H.at(0, 0)) < 1e-17);
  REQUIRE_THROWS_AS(assemble_channel(s, {}), contract_error);
}

TEST_CASE("siso equals the scalar reduction of a 1x1 mimo assembly") {
  Scene s = empty_box();
  s.planes.push_back(make_plane({5, 5, 0}, {0, 0, 1}, 20, 20));
  Vec3 rx{6.5, 3.5, 1.1};
  auto paths = trace(s, s.tx_pos, rx);
  REQUIRE(paths.size() == 2);
  ChannelMatrix H = assemble_channel(s, paths);
  Complex by_hand = 0.0;
  for (const auto& p : paths) by_hand += std::polar(p.amplitude, p.phase);
  REQUIRE(H.at(0, 0) == by_hand);
}

TEST_CASE("trace rejects degenerate endpoints") {
  Scene s = empty_box();
  REQUIRE_THROWS_AS(trace(s, s.tx_pos, s.tx_pos), contract_error);
  Scene p = empty_box();
  p.planes.push_back(make_plane({5, 5, 2.4}, {0, 0, 1}, 20, 20));
  REQUIRE_THROWS_AS(trace(p, {5, 5, 2.4}, {2, 2, 1}), data_error);
}

TEST_CASE("dataset generation is seeded, clear of planes, and round-trips") {
  Scene s = empty_box(2, 1, 2);
  s.planes.push_back(make_plane({5, 5, 0}, {0, 0, 1}, 20, 20));
  s.planes.push_back(make_plane({0, 5, 1.5}, {1, 0, 0}, 6, 6, {6.27, -0.17}));

  Dataset one = generate_dataset(s, 1, 7);
  REQUIRE(one.samples.size() == 1);
  std::string path =
      (std::filesystem::temp_directory_path() / "gen.ngrfdata").string();
  save_dataset(path, one);
  Dataset back = load_dataset(path);
  REQUIRE(back.samples.size() == 1);
  REQUIRE(std::memcmp(back.samples[0].H.h.data(), one.samples[0].H.h.data(),
                      one.samples[0].H.h.size() * sizeof(Complex)) == 0);
  REQUIRE(back.meta.at("tx_pos")[0].get<double>() == s.tx_pos.x);
  std::remove(path.c_str());

  Dataset a = generate_dataset(s, 40, 123);
  Dataset b = generate_dataset(s, 40, 123);
  for (size_t i = 0; i < a.samples.size(); ++i) {
    REQUIRE(std::memcmp(&a.samples[i].p_rx, &b.samples[i].p_rx,
                        sizeof(Vec3)) == 0);
    REQUIRE(std::memcmp(a.samples[i].H.h.data(), b.samples[i].H.h.data(),
                        a.samples[i].H.h.size() * sizeof(Complex)) == 0);
  }
  Dataset c = generate_dataset(s, 40, 124);
  bool same = true;
  for (size_t i = 0; i < c.samples.size() && same; ++i)
    same = std::memcmp(&a.samples[i].p_rx, &c.samples[i].p_rx, sizeof(Vec3)) == 0;
  REQUIRE(!same);

  for (const auto& smp : a.samples) {
    for (const auto& pl : s.planes)
      REQUIRE(plane_distance(pl, smp.p_rx) >= kPlaneClearance);
    REQUIRE(smp.p_rx.x >= 0.0);
    REQUIRE(smp.p_rx.x <= 10.0);
  }

  // transmitter hugging a reflector is refused
  Scene bad = s;
  bad.tx_pos = {5, 5, 0.05};
  REQUIRE_THROWS_AS(generate_dataset(bad, 4, 1), data_error);
}

TEST_CASE("density converts through cubic feet") {
  Bounds box{{0, 0, 0}, {10, 10, 3}};
  REQUIRE(box_volume_ft3(box) == Catch::Approx(10594.40001).epsilon(1e-6));
  REQUIRE(samples_for_density(box, 0.011) == 117);
  REQUIRE_THROWS_AS(samples_for_density(box, 0.0), contract_error);
}

TEST_CASE("scene json parses, validates, and defaults the transmitter") {
  nlohmann::json j = {
      {"carrier_hz", 2.4e9},
      {"bounds", {{"lo", {0, 0, 0}}, {"hi", {10, 8, 3}}}},
      {"planes",
       {{{"point", {5, 4, 0}},
         {"normal", {0, 0, 2}},  // non-unit on purpose
         {"extent_uv", {10, 8}},
         {"material", "concrete"}},
        {{"point", {0, 4, 1.5}},
         {"normal", {1, 0, 0}},
         {"extent_uv", {4, 1.4}},
         {"eps_re", 3.0},
         {"eps_im", -0.1}}}},
      {"tx_array", {{"type", "ura"}, {"rows", 4}, {"cols", 4}}},
      {"rx_array", {{"type", "ula"}, {"n", 2}, {"spacing_lambda", 0.5}}}};

  Scene s = scene_from_json(j);
  REQUIRE(s.nt() == 16);
  REQUIRE(s.nr() == 2);
  REQUIRE(s.planes.size() == 2);
  REQUIRE(s.planes[0].normal.norm() == Catch::Approx(1.0).margin(1e-15));
  REQUIRE(s.planes[0].eps_r == Complex(5.31, -0.28));
  REQUIRE(s.planes[1].eps_r == Complex(3.0, -0.1));
  // default transmitter: floor-plan center at 80% height
  REQUIRE(s.tx_pos.x == Catch::Approx(5.0));
  REQUIRE(s.tx_pos.y == Catch::Approx(4.0));
  REQUIRE(s.tx_pos.z == Catch::Approx(2.4));
  // in-plane frame is orthonormal
  for (const auto& p : s.planes) {
    REQUIRE(p.u_axis.dot(p.normal) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.v_axis.dot(p.normal) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.u_axis.dot(p.v_axis) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.u_axis.norm() == Catch::Approx(1.0).margin(1e-12));
  }

  auto bad_eps = j;
  bad_eps["planes"][1]["eps_re"] = 0.5;
  REQUIRE_THROWS_AS(scene_from_json(bad_eps), data_error);
  auto bad_mat = j;
  bad_mat["planes"][0]["material"] = "adamantium";
  REQUIRE_THROWS_AS(scene_from_json(bad_mat), data_error);
  REQUIRE(material_eps("wood") == Complex(1.99, -0.19));
  REQUIRE(material_eps("glass") == Complex(6.27, -0.17));

  // array element layouts
  auto tx = s.tx_elements();
  REQUIRE(tx.size() == 16);
  REQUIRE(tx[0].norm() == 0.0);
  double d = 0.5 * s.wavelength();
  REQUIRE(tx[1].y == Catch::Approx(d));  // column-fastest
  REQUIRE(tx[4].x == Catch::Approx(d));
  auto rx = s.rx_elements();
  REQUIRE(rx[1].x == Catch::Approx(d));
  REQUIRE(rx[1].y == 0.0);
}
