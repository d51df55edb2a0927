/* Copyright 2026 The cdadapt Authors. All Rights Reserved.

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

// Single-file checkpoints: the four segmentation parameter groups keyed by
// partition name, the optional discriminator, optimizer states and a JSON
// metadata record carrying the configuration hashes.

#ifndef CDADAPT_CHECKPOINT_HPP
#define CDADAPT_CHECKPOINT_HPP

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cdadapt/network.hpp"

namespace cdadapt {

struct CheckpointMeta {
  std::string stage;          // "source", "ada", "mlft"
  int epochs_done = 0;
  std::string config_hash;    // hash of the full run configuration
  std::string network_hash;   // hash of the architecture; verified on load
  nlohmann::json config;      // full run configuration
  nlohmann::json extra;       // stage-specific bookkeeping
};

using NamedOptimizers = std::vector<std::pair<std::string, torch::optim::Optimizer*>>;

/// Atomic write: the archive is written to "<path>.tmp" and renamed.
void save_checkpoint(const std::filesystem::path& path, ChangeDetector& model,
                     Discriminator* disc, const NamedOptimizers& optimizers,
                     const CheckpointMeta& meta);

/// Restores whatever of (model, disc, optimizers) is requested. Throws when
/// the stored network hash or any group shape disagrees with `model`.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ChangeDetector& model,
                               Discriminator* disc = nullptr,
                               const NamedOptimizers& optimizers = {});

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Hex digest of the raw bytes of every parameter in a group, in name order.
std::string group_digest(ChangeDetector& model, Group g);
std::string module_digest(torch::nn::Module& module);

}  // namespace cdadapt

#endif  // CDADAPT_CHECKPOINT_HPP
