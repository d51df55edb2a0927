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

#include "cdadapt/trainer_common.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cdadapt/data_pipeline.hpp"

namespace cdadapt {
namespace fs = std::filesystem;

GradScope::GradScope(ChangeDetector& model, const std::vector<Group>& trainable) {
  for (Group g : kAllGroups) {
    const bool on = std::find(trainable.begin(), trainable.end(), g) != trainable.end();
    for (auto& p : model->group_parameters(g)) {
      saved_.emplace_back(p, p.requires_grad());
      p.set_requires_grad(on);
    }
  }
}

GradScope::~GradScope() {
  for (auto& [p, flag] : saved_) p.set_requires_grad(flag);
}

ModuleGradScope::ModuleGradScope(torch::nn::Module& module, bool requires_grad) {
  for (auto& p : module.parameters(true)) {
    saved_.emplace_back(p, p.requires_grad());
    p.set_requires_grad(requires_grad);
  }
}

ModuleGradScope::~ModuleGradScope() {
  for (auto& [p, flag] : saved_) p.set_requires_grad(flag);
}

std::vector<torch::Tensor> collect_parameters(ChangeDetector& model, const std::vector<Group>& groups) {
  std::vector<torch::Tensor> params;
  for (Group g : groups) {
    auto gp = model->group_parameters(g);
    params.insert(params.end(), gp.begin(), gp.end());
  }
  return params;
}

std::unique_ptr<torch::optim::AdamW> make_adamw(std::vector<torch::Tensor> params,
                                                const Schedule& schedule) {
  return std::make_unique<torch::optim::AdamW>(
      std::move(params), torch::optim::AdamWOptions(schedule.lr).weight_decay(schedule.weight_decay));
}

void set_learning_rate(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0xe90cULL, static_cast<std::uint64_t>(epoch)));
  // Fisher-Yates with an explicit index draw keeps the order independent of
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<const ImagePair*> take_cyclic(const std::vector<ImagePair>& pool,
                                          const std::vector<std::size_t>& order,
                                          std::size_t cursor, std::size_t count) {
  std::vector<const ImagePair*> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(&pool[order[(cursor + i) % order.size()]]);
  return out;
}

JsonlLog::JsonlLog(const fs::path& path, bool resume, int keep_below_epoch) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::vector<std::string> kept;
  if (resume && fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto rec = nlohmann::json::parse(line, nullptr, false);
      if (!rec.is_discarded() && rec.value("epoch", 0) < keep_below_epoch) kept.push_back(line);
    }
  }
  out_.open(path, std::ios::trunc);
  for (const auto& line : kept) out_ << line << '\n';
  out_.flush();
}

void JsonlLog::append(const nlohmann::json& record) {
  if (!out_.is_open()) return;
  out_ << record.dump() << '\n';
  out_.flush();
}

}  // namespace cdadapt
