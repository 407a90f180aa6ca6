// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoints: a flat manifest of (name, shape, dtype, raw bytes).
//
//   bytes 0..7    magic "MAXCKPT1"
//   bytes 8..15   header length N, unsigned 64-bit little-endian
//   next N bytes  UTF-8 JSON index:
//                   { "format": "maskapprox-checkpoint", "version": 1,
//                     "hyperparams": {...},
//                     "tensors": [ { "name", "shape", "dtype", "offset", "nbytes" } ] }
//   remainder     tensor payloads in index order, little-endian IEEE-754
//                 (4 bytes per f32 value, 8 per f64); offsets are relative to
//                 the start of the payload section.

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "maskapprox/nn.hpp"

namespace maskapprox {

struct Checkpoint {
  nlohmann::json hyperparams = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const nlohmann::json& hyperparams);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `params`; names, order and shapes must match.
void load_into(ParameterSet& params, const Checkpoint& checkpoint);

}  // namespace maskapprox
