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

#include "cdadapt/checkpoint.hpp"

#include <gtest/gtest.h>

#include "cdadapt/config.hpp"
#include "cdadapt/trainer_common.hpp"
#include "fixtures.hpp"

namespace cdadapt {
namespace {

TEST(CheckpointTest, RoundTripRestoresEverything) {
  const auto dir = testing::scratch_dir("ckpt");
  auto m = testing::toy_model(1);
  auto d = testing::toy_disc(2);
  auto opt = make_adamw(d->parameters(), Schedule{});
  // One step so the optimizer carries state.
  d->forward(torch::rand({1, 8, 8, 8})).sum().backward();
  opt->step();

  CheckpointMeta meta;
  meta.stage = "ada";
  meta.epochs_done = 3;
  meta.network_hash = network_hash(NetworkConfig::toy());
  meta.config_hash = "abc";
  meta.extra = {{"k", 1}};
  save_checkpoint(dir / "x.ckpt", m, &d, {{"disc", opt.get()}}, meta);
  EXPECT_FALSE(std::filesystem::exists(dir / "x.ckpt.tmp"));

  auto m2 = testing::toy_model(9);
  auto d2 = testing::toy_disc(9);
  auto opt2 = make_adamw(d2->parameters(), Schedule{});
  EXPECT_NE(module_digest(*m2), module_digest(*m));
  const auto back = load_checkpoint(dir / "x.ckpt", m2, &d2, {{"disc", opt2.get()}});
  EXPECT_EQ(back.stage, "ada");
  EXPECT_EQ(back.epochs_done, 3);
  EXPECT_EQ(back.config_hash, "abc");
  EXPECT_EQ(back.extra["k"], 1);
  for (Group g : kAllGroups) EXPECT_EQ(group_digest(m2, g), group_digest(m, g));
  EXPECT_EQ(module_digest(*d2), module_digest(*d));

  // Same optimizer state: one more identical step keeps the two in lockstep.
  const auto x = torch::rand({1, 8, 8, 8});
  opt->zero_grad();
  d->forward(x).sum().backward();
  opt->step();
  opt2->zero_grad();
  d2->forward(x).sum().backward();
  opt2->step();
  EXPECT_EQ(module_digest(*d2), module_digest(*d));
  EXPECT_EQ(read_checkpoint_meta(dir / "x.ckpt").stage, "ada");
}

TEST(CheckpointTest, RejectsOtherArchitecture) {
  const auto dir = testing::scratch_dir("ckpt_arch");
  auto m = testing::toy_model(1);
  CheckpointMeta meta;
  meta.stage = "source";
  meta.network_hash = network_hash(NetworkConfig::toy());
  save_checkpoint(dir / "x.ckpt", m, nullptr, {}, meta);
  auto other = testing::toy_model(1, torch::kFloat32, NetworkConfig::desk());
  EXPECT_ANY_THROW(load_checkpoint(dir / "x.ckpt", other));
  EXPECT_ANY_THROW(load_checkpoint(dir / "missing.ckpt", m));
}

TEST(CheckpointTest, DigestSeesSingleBitChanges) {
  auto m = testing::toy_model(1);
  const auto before = group_digest(m, Group::kHead);
  const auto enc = group_digest(m, Group::kEncoder);
  {
    torch::NoGradGuard no_grad;
    auto p = testing::named_parameter(*m, "head.up2.bias");
    p.add_(1e-7);
  }
  EXPECT_NE(group_digest(m, Group::kHead), before);
  EXPECT_EQ(group_digest(m, Group::kEncoder), enc);
}

}  // namespace
}  // namespace cdadapt
