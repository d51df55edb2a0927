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

#include "cdadapt/config.hpp"

#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"

namespace cdadapt {
namespace {

TEST(ConfigTest, FreezePresets) {
  const auto a110 = FreezeConfig::preset("a110");
  EXPECT_EQ(a110.groups(), (std::vector<Group>{Group::kMtFusion, Group::kMsFusion}));
  EXPECT_EQ(FreezeConfig::preset("a001").groups(), std::vector<Group>{Group::kHead});
  EXPECT_EQ(FreezeConfig::preset("a111").groups().size(), 3U);
  for (const char* name : {"a100", "a010", "a001", "a111", "a110"}) {
    EXPECT_EQ(FreezeConfig::preset(name).preset_name(), name);
  }
  EXPECT_THROW(FreezeConfig::preset("a000"), std::invalid_argument);
  EXPECT_THROW(FreezeConfig::preset("b110"), std::invalid_argument);
  FreezeConfig none{false, false, false, false};
  EXPECT_THROW(none.validate(), std::invalid_argument);
  FreezeConfig enc = a110;
  enc.train_encoder = true;
  EXPECT_EQ(enc.preset_name(), "custom");
}

TEST(ConfigTest, DefaultWeightsSumToOne) {
  const LossWeights w;
  EXPECT_EQ(w.alpha, 30.0 / 46.0);
  EXPECT_EQ(w.beta, 1.0 / 46.0);
  EXPECT_EQ(w.gamma, 15.0 / 46.0);
  EXPECT_NEAR(w.alpha + w.beta + w.gamma, 1.0, 1e-15);
  LossWeights z = w;
  z.alpha = 0;
  EXPECT_THROW(z.validate(), std::invalid_argument);
  EXPECT_NO_THROW(z.validate(true));
}

TEST(ConfigTest, StepDecay) {
  Schedule s;
  s.lr = 1e-3;
  for (int e = 0; e < 5; ++e) EXPECT_DOUBLE_EQ(s.lr_at(e), 1e-3);
  EXPECT_DOUBLE_EQ(s.lr_at(5), 1e-3 * 0.8);
  EXPECT_DOUBLE_EQ(s.lr_at(14), 1e-3 * 0.8 * 0.8);
  EXPECT_NEAR(s.lr_at(100), 1e-3 * std::pow(0.8, 20), 1e-18);
}

TEST(ConfigTest, BatchSpecArithmetic) {
  const MlftBatchSpec b;
  EXPECT_EQ(b.n_perturbed(), 30);
  EXPECT_EQ(b.total(), 61);
}

TEST(ConfigTest, JsonRoundTripAndHash) {
  RunConfig c;
  c.seed = 42;
  c.network = NetworkConfig::desk();
  c.freeze = FreezeConfig::preset("a111");
  c.ada.lr = 5e-4;
  c.weights.beta = 0.5;
  const nlohmann::json j = c;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.freeze, c.freeze);
  EXPECT_EQ(back.network, c.network);

  RunConfig d = c;
  d.freeze = FreezeConfig::preset("a110");
  EXPECT_NE(d.hash(), c.hash());
  EXPECT_EQ(network_hash(d.network), network_hash(c.network));
  EXPECT_NE(network_hash(NetworkConfig::toy()), network_hash(c.network));
}

TEST(ConfigTest, LoadsPartialFile) {
  const auto dir = testing::scratch_dir("config");
  std::ofstream(dir / "c.json") << R"({"seed": 7, "freeze": "a001", "ada": {"lr": 0.002}})";
  const RunConfig c = load_run_config(dir / "c.json");
  EXPECT_EQ(c.seed, 7U);
  EXPECT_EQ(c.freeze, FreezeConfig::preset("a001"));
  EXPECT_DOUBLE_EQ(c.ada.lr, 0.002);
  EXPECT_EQ(c.ada.batch_step1, AdaSchedule{}.batch_step1);
  EXPECT_THROW(load_run_config(dir / "missing.json"), std::runtime_error);
}

TEST(ConfigTest, ValidateRejectsBadValues) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.cdmatch.confidence = 0.3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.cdmatch.fp_rate = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.ada.batch_step23_per_domain = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace cdadapt
