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

#ifndef CDADAPT_TRAINER_COMMON_HPP
#define CDADAPT_TRAINER_COMMON_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cdadapt/config.hpp"
#include "cdadapt/network.hpp"

namespace cdadapt {

/// Marks exactly `trainable` groups as requiring gradients for its lifetime
/// and restores the previous flags afterwards.
class GradScope {
 public:
  GradScope(ChangeDetector& model, const std::vector<Group>& trainable);
  GradScope(const GradScope&) = delete;
  GradScope& operator=(const GradScope&) = delete;
  ~GradScope();

 private:
  std::vector<std::pair<torch::Tensor, bool>> saved_;
};

/// Same for every parameter of an arbitrary module.
class ModuleGradScope {
 public:
  ModuleGradScope(torch::nn::Module& module, bool requires_grad);
  ModuleGradScope(const ModuleGradScope&) = delete;
  ModuleGradScope& operator=(const ModuleGradScope&) = delete;
  ~ModuleGradScope();

 private:
  std::vector<std::pair<torch::Tensor, bool>> saved_;
};

std::vector<torch::Tensor> collect_parameters(ChangeDetector& model, const std::vector<Group>& groups);

std::unique_ptr<torch::optim::AdamW> make_adamw(std::vector<torch::Tensor> params,
                                                const Schedule& schedule);
void set_learning_rate(torch::optim::Optimizer& opt, double lr);

/// Deterministic permutation of [0, n) for a given (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch);

/// `count` consecutive entries of `order`, wrapping around, starting at
/// position `cursor`.
std::vector<const ImagePair*> take_cyclic(const std::vector<ImagePair>& pool,
                                          const std::vector<std::size_t>& order,
                                          std::size_t cursor, std::size_t count);

/// Newline-delimited JSON log; on resume, keeps only the records whose
/// "epoch" field is below `keep_below_epoch`.
class JsonlLog {
 public:
  JsonlLog() = default;
  JsonlLog(const std::filesystem::path& path, bool resume, int keep_below_epoch);
  void append(const nlohmann::json& record);
  [[nodiscard]] bool is_open() const { return out_.is_open(); }

 private:
  std::ofstream out_;
};

/// Shared knobs of the long-running training loops.
struct RunOptions {
  std::filesystem::path out_dir;   // empty: no checkpoints or log files
  bool resume = false;
  bool quiet = true;               // when false, records are echoed to stdout
  std::function<void(const nlohmann::json&)> on_record;
};

}  // namespace cdadapt

#endif  // CDADAPT_TRAINER_COMMON_HPP
