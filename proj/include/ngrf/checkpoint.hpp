// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model checkpoints: magic "NGRFCKPT", u32 version, u32 header length, JSON
// header (renderer tag + structural config, parameter group shapes, training
// config, iteration, metric history), then one raw little-endian f64 blob per
// parameter group in declaration order. Parameters round-trip bit-exactly.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ngrf/factory.hpp"
#include "ngrf/trainer.hpp"

namespace ngrf {

constexpr char kCheckpointMagic[8] = {'N', 'G', 'R', 'F', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::unique_ptr<Renderer> renderer;
  TrainConfig train_config;
  size_t iteration = 0;
  std::vector<MetricRow> history;
};

inline void save_checkpoint(const std::string& path, Renderer& r,
                            const TrainConfig& cfg, size_t iteration,
                            const std::vector<MetricRow>& history) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open for write: " + path);

  auto groups = r.param_groups();
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& g : groups)
    shapes.push_back({{"name", g.name}, {"size", g.size()}});

  nlohmann::json hist = nlohmann::json::array();
  for (const auto& m : history)
    hist.push_back({m.iter, m.loss, m.est, m.act, m.reg, m.train_snr,
                    m.test_snr});

  nlohmann::json header = {{"renderer", r.tag()},
                           {"model", r.describe()},
                           {"groups", shapes},
                           {"train_config", cfg},
                           {"iteration", iteration},
                           {"history", hist}};
  std::string hs = header.dump();

  os.write(kCheckpointMagic, 8);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<uint32_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& g : groups)
    for (const auto& sp : g.spans)
      os.write(reinterpret_cast<const char*>(sp.p),
               static_cast<std::streamsize>(sp.n * sizeof(double)));
  if (!os) throw data_error("short write: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open: " + path);

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw data_error("not a checkpoint file: " + path);
  uint32_t version = detail::read_u32(is);
  if (version != kCheckpointVersion)
    throw data_error("unsupported checkpoint version " +
                     std::to_string(version));
  uint32_t hlen = detail::read_u32(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw data_error("truncated checkpoint header: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("bad checkpoint header: ") + e.what());
  }

  CheckpointData out;
  out.renderer = make_renderer(header.at("renderer").get<std::string>(),
                               header.at("model"));
  out.train_config = header.at("train_config").get<TrainConfig>();
  out.iteration = header.at("iteration").get<size_t>();
  for (const auto& row : header.at("history")) {
    MetricRow m;
    m.iter = row.at(0).get<size_t>();
    m.loss = row.at(1).get<double>();
    m.est = row.at(2).get<double>();
    m.act = row.at(3).get<double>();
    m.reg = row.at(4).get<double>();
    m.train_snr = row.at(5).get<double>();
    m.test_snr = row.at(6).get<double>();
    out.history.push_back(m);
  }

  auto groups = out.renderer->param_groups();
  const auto& shapes = header.at("groups");
  if (shapes.size() != groups.size())
    throw data_error("checkpoint group list does not match model");
  for (size_t g = 0; g < groups.size(); ++g) {
    if (shapes[g].at("name").get<std::string>() != groups[g].name ||
        shapes[g].at("size").get<size_t>() != groups[g].size())
      throw data_error("checkpoint group '" + groups[g].name +
                       "' does not match model shape");
    for (const auto& sp : groups[g].spans)
      is.read(reinterpret_cast<char*>(sp.p),
              static_cast<std::streamsize>(sp.n * sizeof(double)));
  }
  if (!is) throw data_error("truncated checkpoint blobs: " + path);
  return out;
}

}  // namespace ngrf
