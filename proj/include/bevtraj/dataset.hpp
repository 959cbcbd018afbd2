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
#include <span>
#include <string>
#include <vector>

#include "bevtraj/config.hpp"
#include "bevtraj/scene.hpp"

namespace bevtraj::data {

inline constexpr char kRecordMagic[8] = {'B', 'E', 'V', 'T', 'R', 'A', 'J', 'R'};
inline constexpr uint32_t kRecordVersion = 1;
inline constexpr char kIndexHeader[] = "bevtraj-dataset";

// Binary record for one scene. See docs/dataset_format.md for the layout.
std::string encode_sample(const sim::SceneSample& sample);
// Throws Error with kBadMagic, kVersionMismatch, kTruncated,
// kChecksumMismatch or kParse.
sim::SceneSample decode_sample(const std::string& bytes);

void write_record(const sim::SceneSample& sample, const std::string& path);
sim::SceneSample read_record(const std::string& path);

// Directory with an `index` file and one `<scene_id>.rec` per scene.
void write_dataset(std::span<const sim::SceneSample> samples, const std::string& dir);
std::vector<sim::SceneSample> read_dataset(const std::string& dir);
std::vector<std::string> read_index(const std::string& dir);

// Per-scene seed of scene `i` in a dataset generated from `seed`.
uint64_t scene_seed(uint64_t seed, int i);
std::vector<sim::SceneSample> generate_dataset(uint64_t seed, int n_scenes, const SimConfig& cfg);

}  // namespace bevtraj::data
