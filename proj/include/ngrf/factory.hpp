// SPDX-License-Identifier: Apache-2.0
#pragma once

// Renderer construction by tag. Checkpoint loading and the CLI go through
// here so new model variants only need to register below.

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "ngrf/baselines.hpp"
#include "ngrf/cs1.hpp"
#include "ngrf/cs2.hpp"
#include "ngrf/model.hpp"

namespace ngrf {

inline std::unique_ptr<Renderer> make_renderer(const std::string& tag,
                                               const nlohmann::json& config) {
  if (tag == "ngrf") return std::make_unique<NgrfRenderer>(config);
  if (tag == "mlp") return std::make_unique<MlpBaselineRenderer>(config);
  if (tag == "cs1") return std::make_unique<Cs1Renderer>(config);
  if (tag == "cs2") return std::make_unique<Cs2Renderer>(config);
  throw data_error("unknown renderer tag: " + tag);
}

}  // namespace ngrf
