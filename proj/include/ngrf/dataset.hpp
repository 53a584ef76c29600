// SPDX-License-Identifier: Apache-2.0
#pragma once

// Measurement container and its binary file format.
//
// Layout: magic "NGRFDATA", u32 version, u32 header length, JSON header
// (nt, nr, carrier_hz, count, plus optional scene extras), then `count`
// fixed-size records: f64 p_tx[3], f64 p_rx[3], interleaved re/im f64
// pairs for H in row-major [t][r] order. Everything little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/channel.hpp"
#include "ngrf/common.hpp"
#include "ngrf/math.hpp"
#include "ngrf/rng.hpp"

namespace ngrf {

constexpr char kDatasetMagic[8] = {'N', 'G', 'R', 'F', 'D', 'A', 'T', 'A'};
constexpr uint32_t kDatasetVersion = 1;

struct Sample {
  Vec3 p_tx, p_rx;
  ChannelMatrix H;
};

struct Dataset {
  size_t nt = 1, nr = 1;
  double carrier_hz = 0.0;
  std::vector<Sample> samples;
  // optional extras carried through the header: scene bounds, array
  // geometry, fixed transmitter position. Consumers probe by key.
  nlohmann::json meta = nlohmann::json::object();

  size_t entries() const { return nt * nr; }
};

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for write: " + path);

  nlohmann::json header = ds.meta;
  header["nt"] = ds.nt;
  header["nr"] = ds.nr;
  header["carrier_hz"] = ds.carrier_hz;
  header["count"] = ds.samples.size();
  std::string hs = header.dump();

  os.write(kDatasetMagic, 8);
  detail::write_u32(os, kDatasetVersion);
  detail::write_u32(os, static_cast<uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  size_t ent = ds.entries();
  for (const auto& s : ds.samples) {
    if (s.H.nt != ds.nt || s.H.nr != ds.nr)
      throw data_error("sample channel shape does not match dataset header");
    double pos[6] = {s.p_tx.x, s.p_tx.y, s.p_tx.z,
                     s.p_rx.x, s.p_rx.y, s.p_rx.z};
    os.write(reinterpret_cast<const char*>(pos), sizeof(pos));
    // std::complex<double> is laid out as adjacent re,im doubles
    os.write(reinterpret_cast<const char*>(s.H.h.data()),
             static_cast<std::streamsize>(ent * 2 * sizeof(double)));
  }
  if (!os) throw data_error("short write: " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw data_error("not a dataset file: " + path);
  uint32_t version = detail::read_u32(is);
  if (version != kDatasetVersion)
    throw data_error("unsupported dataset version " + std::to_string(version));
  uint32_t hlen = detail::read_u32(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw data_error("truncated dataset header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("bad dataset header: ") + e.what());
  }

  Dataset ds;
  ds.nt = header.at("nt").get<size_t>();
  ds.nr = header.at("nr").get<size_t>();
  ds.carrier_hz = header.at("carrier_hz").get<double>();
  size_t count = header.at("count").get<size_t>();
  if (ds.nt < 1 || ds.nr < 1)
    throw data_error("dataset header has degenerate array sizes");
  header.erase("nt");
  header.erase("nr");
  header.erase("carrier_hz");
  header.erase("count");
  ds.meta = std::move(header);

  size_t ent = ds.nt * ds.nr;
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    double pos[6];
    is.read(reinterpret_cast<char*>(pos), sizeof(pos));
    s.p_tx = {pos[0], pos[1], pos[2]};
    s.p_rx = {pos[3], pos[4], pos[5]};
    s.H = ChannelMatrix(ds.nt, ds.nr);
    is.read(reinterpret_cast<char*>(s.H.h.data()),
            static_cast<std::streamsize>(ent * 2 * sizeof(double)));
    if (!is) throw data_error("truncated dataset records: " + path);
  }
  return ds;
}

// Deterministic shuffled split; the same seed always produces the same
// partition regardless of platform.
struct SplitIndices {
  std::vector<size_t> train, test;
};

inline SplitIndices split_dataset(size_t count, double train_fraction,
                                  uint64_t seed) {
  if (count == 0) throw data_error("empty dataset");
  std::vector<size_t> idx(count);
  for (size_t i = 0; i < count; ++i) idx[i] = i;
  // fixed stream index reserved for the split, clear of per-sample streams
  Rng rng = Rng::stream(seed, 0xa11d1517u);
  rng.shuffle(idx.data(), idx.size());
  size_t n_train = static_cast<size_t>(train_fraction * count + 0.5);
  if (n_train == 0) n_train = 1;
  if (n_train > count) n_train = count;
  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + n_train);
  out.test.assign(idx.begin() + n_train, idx.end());
  return out;
}

}  // namespace ngrf
