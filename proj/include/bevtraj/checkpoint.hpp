/* Copyright 2026 The BEVTraj Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <torch/torch.h>

namespace bevtraj::ckpt {

inline constexpr char kCheckpointMagic[8] = {'B', 'E', 'V', 'T', 'R', 'A', 'J', 'C'};
inline constexpr uint32_t kCheckpointVersion = 1;

enum class Kind : uint32_t { kEncoder = 0, kModel = 1 };

struct Meta {
  Kind kind = Kind::kModel;
  std::map<std::string, std::string> fields;  // config fields the weights depend on
  std::string config_hash;
  int32_t epoch = 0;   // completed epochs
  int64_t step = 0;    // completed optimizer steps
};

// Fields of a full config map that must agree for weights of `kind` to load.
std::map<std::string, std::string> compatibility_fields(Kind kind,
                                                        const std::map<std::string, std::string>& all);

// Parameters, buffers and (optionally) AdamW state as named little-endian
// blobs followed by a CRC-32 trailer.
void save(const std::string& path, const Meta& meta, const torch::nn::Module& module,
          torch::optim::AdamW* optimizer = nullptr);

Meta read_meta(const std::string& path);

// Loads weights in place. When `expected` is given, every compatibility
// field must match; the first difference throws kCheckpointMismatch naming
// the field. Optimizer state is restored when present and `optimizer` is set.
Meta load(const std::string& path, torch::nn::Module& module, torch::optim::AdamW* optimizer = nullptr,
          const Meta* expected = nullptr);

}  // namespace bevtraj::ckpt
