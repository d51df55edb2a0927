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

// Serializable run configuration shared by the trainers and the CLI.

#ifndef CDADAPT_CONFIG_HPP
#define CDADAPT_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdadapt/network.hpp"

namespace cdadapt {

/// Which segmentation groups an adversarial (step-3) or fine-tuning update may
/// touch.
struct FreezeConfig {
  bool train_mt_fusion = true;
  bool train_ms_fusion = true;
  bool train_head = false;
  bool train_encoder = false;

  /// a100 / a010 / a001 / a111 / a110; digits are mt_fusion, ms_fusion, head.
  static FreezeConfig preset(std::string_view name);
  [[nodiscard]] std::string preset_name() const;  // "custom" when no preset matches
  [[nodiscard]] std::vector<Group> groups() const;
  void validate() const;
  friend bool operator==(const FreezeConfig&, const FreezeConfig&) = default;
};

struct Schedule {
  double lr = 1e-5;
  double lr_decay = 0.8;
  int decay_every = 5;
  int epochs = 100;
  double weight_decay = 0.01;

  [[nodiscard]] double lr_at(int epoch) const;
  void validate() const;
};

/// Adversarial stage: schedule plus the two batch sizes.
struct AdaSchedule : Schedule {
  int batch_step1 = 16;
  int batch_step23_per_domain = 16;
};

struct SourceSchedule : Schedule {
  int batch = 16;
  SourceSchedule() { lr = 1e-3; epochs = 30; }
};

struct MlftBatchSpec {
  int n_unlabeled_tgt = 15;
  int n_labeled_tgt = 1;
  int n_labeled_src = 15;

  /// One feature-perturbed and one image-perturbed view per unlabeled sample.
  [[nodiscard]] int n_perturbed() const { return 2 * n_unlabeled_tgt; }
  [[nodiscard]] int total() const {
    return n_unlabeled_tgt + n_perturbed() + n_labeled_tgt + n_labeled_src;
  }
  void validate() const;
};

struct MlftSchedule : Schedule {
  MlftSchedule() { lr = 5e-6; }
};

struct LossWeights {
  double alpha = 30.0 / 46.0;
  double beta = 1.0 / 46.0;
  double gamma = 15.0 / 46.0;

  /// All weights must be > 0 unless `allow_zero` (config override path).
  void validate(bool allow_zero = false) const;
};

struct CdMatchConfig {
  double confidence = 0.95;  // keep pixels with max(p, 1-p) >= confidence
  double fp_rate = 0.5;      // channel dropout on the fused features
};

struct SelectionConfig {
  int k = 16;
  double min_change_frac = 0.005;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string device = "cpu";
  NetworkConfig network;
  SourceSchedule source;
  FreezeConfig freeze = FreezeConfig::preset("a110");
  AdaSchedule ada;
  MlftBatchSpec mlft_batch;
  MlftSchedule mlft;
  FreezeConfig mlft_freeze = FreezeConfig::preset("a110");
  LossWeights weights;
  CdMatchConfig cdmatch;
  SelectionConfig selection;
  bool allow_zero_weights = false;

  void validate() const;
  /// FNV-1a over the canonical JSON of the configuration.
  [[nodiscard]] std::string hash() const;
};

std::string network_hash(const NetworkConfig& cfg);

void to_json(nlohmann::json& j, const FreezeConfig& c);
void from_json(const nlohmann::json& j, FreezeConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace cdadapt

#endif  // CDADAPT_CONFIG_HPP
