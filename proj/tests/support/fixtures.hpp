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

// Small helpers shared by the test binaries.

#ifndef CDADAPT_TESTS_FIXTURES_HPP
#define CDADAPT_TESTS_FIXTURES_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "cdadapt/network.hpp"

namespace cdadapt::testing {

inline ChangeDetector toy_model(std::uint64_t seed, torch::Dtype dtype = torch::kFloat32,
                                const NetworkConfig& cfg = NetworkConfig::toy()) {
  torch::manual_seed(seed);
  ChangeDetector m(cfg);
  m->to(dtype);
  return m;
}

inline Discriminator toy_disc(std::uint64_t seed, torch::Dtype dtype = torch::kFloat32,
                              const NetworkConfig& cfg = NetworkConfig::toy()) {
  torch::manual_seed(seed);
  Discriminator d(cfg);
  d->to(dtype);
  return d;
}

inline PairBatch to_dtype(PairBatch b, torch::Dtype dtype) {
  b.t1 = b.t1.to(dtype);
  b.t2 = b.t2.to(dtype);
  if (b.mask.defined()) b.mask = b.mask.to(dtype);
  return b;
}

inline void zero_parameters(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.parameters()) p.zero_();
}

inline torch::Tensor named_parameter(torch::nn::Module& m, const std::string& name) {
  for (const auto& item : m.named_parameters()) {
    if (item.key() == name) return item.value();
  }
  throw std::out_of_range("no parameter " + name);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cdadapt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cdadapt::testing

#endif  // CDADAPT_TESTS_FIXTURES_HPP
