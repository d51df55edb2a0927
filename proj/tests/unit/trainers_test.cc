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

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "cdadapt/ada_trainer.hpp"
#include "cdadapt/checkpoint.hpp"
#include "cdadapt/data_pipeline.hpp"
#include "cdadapt/mlft_trainer.hpp"
#include "cdadapt/trainer_common.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace cdadapt {
namespace {

namespace fs = std::filesystem;

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 3;
  c.network = NetworkConfig::toy();
  c.source.epochs = 2;
  c.source.batch = 2;
  c.ada.epochs = 2;
  c.ada.batch_step1 = 2;
  c.ada.batch_step23_per_domain = 2;
  c.ada.lr = 1e-3;
  c.mlft.epochs = 2;
  c.mlft.lr = 1e-4;
  c.mlft_batch = {2, 1, 2};
  c.cdmatch.confidence = 0.5;
  return c;
}

std::vector<ImagePair> src_pairs() { return testing::random_pairs("s", 4, 32, 1, Domain::kSource); }
std::vector<ImagePair> tgt_pairs(bool masks = false) {
  return testing::random_pairs("t", 4, 32, 2, Domain::kTarget, masks);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(TrainerCommonTest, PermutationIsDeterministicAndComplete) {
  const auto a = epoch_permutation(10, 5, 2);
  EXPECT_EQ(a, epoch_permutation(10, 5, 2));
  EXPECT_NE(a, epoch_permutation(10, 5, 3));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(TrainerCommonTest, TakeCyclicWraps) {
  const auto pool = src_pairs();
  const std::vector<std::size_t> order{2, 0, 3, 1};
  const auto got = take_cyclic(pool, order, 3, 3);
  ASSERT_EQ(got.size(), 3U);
  EXPECT_EQ(got[0]->id, "s001");
  EXPECT_EQ(got[1]->id, "s002");
  EXPECT_EQ(got[2]->id, "s000");
}

TEST(TrainerCommonTest, GradScopeRestoresFlags) {
  auto m = testing::toy_model(1);
  {
    GradScope scope(m, {Group::kHead});
    for (auto& p : m->group_parameters(Group::kHead)) EXPECT_TRUE(p.requires_grad());
    for (auto& p : m->group_parameters(Group::kEncoder)) EXPECT_FALSE(p.requires_grad());
  }
  for (auto& p : m->parameters()) EXPECT_TRUE(p.requires_grad());
}

TEST(AdaStepTest, SourceStepRejectsTargetAndUnlabeled) {
  auto m = testing::toy_model(1);
  auto opt = make_adamw(m->parameters(), Schedule{});
  const auto tgt = tgt_pairs(true);
  EXPECT_THROW(train_source_step(DomainBatch{{&tgt[0]}}, m, *opt, {Group::kHead}), std::invalid_argument);
  auto src = src_pairs();
  src[1].mask.reset();
  EXPECT_THROW(train_source_step(DomainBatch{{&src[0], &src[1]}}, m, *opt, {Group::kHead}),
               std::invalid_argument);
  auto d = testing::toy_disc(2);
  EXPECT_THROW(train_discriminator_step(DomainBatch{{&src[0]}}, DomainBatch{{&tgt[0], &tgt[1]}}, m, d, *opt),
               std::invalid_argument);
}

// Each step, run alone for 10 updates with an optimizer that holds every
// parameter, must leave the groups it does not own byte-identical.
TEST(AdaStepTest, FreezePartitionIsSound) {
  const auto src = src_pairs();
  const auto tgt = tgt_pairs();
  for (const char* preset : {"a100", "a010", "a001", "a111", "a110"}) {
    const FreezeConfig freeze = FreezeConfig::preset(preset);
    for (int step = 1; step <= 3; ++step) {
      auto m = testing::toy_model(7);
      auto d = testing::toy_disc(8);
      std::vector<torch::Tensor> all = m->parameters();
      for (auto& p : d->parameters()) all.push_back(p);
      Schedule sch;
      sch.lr = 1e-2;
      auto opt = make_adamw(all, sch);
      std::map<Group, std::string> before;
      for (Group g : kAllGroups) before[g] = group_digest(m, g);
      const std::string disc_before = module_digest(*d);

      std::vector<Group> owned;
      if (step == 1) owned = source_step_groups(freeze);
      if (step == 3) owned = freeze.groups();
      for (int i = 0; i < 10; ++i) {
        DomainBatch s{{&src[i % 4], &src[(i + 1) % 4]}};
        DomainBatch t{{&tgt[i % 4], &tgt[(i + 1) % 4]}};
        if (step == 1) train_source_step(s, m, *opt, owned);
        if (step == 2) train_discriminator_step(s, t, m, d, *opt);
        if (step == 3) train_adversarial_step(s, t, m, d, *opt, owned);
      }
      for (Group g : kAllGroups) {
        const bool trains = std::find(owned.begin(), owned.end(), g) != owned.end();
        if (trains) {
          EXPECT_NE(group_digest(m, g), before[g]) << preset << " step " << step << " " << group_name(g);
        } else {
          EXPECT_EQ(group_digest(m, g), before[g]) << preset << " step " << step << " " << group_name(g);
        }
      }
      if (step == 2) {
        EXPECT_NE(module_digest(*d), disc_before);
      } else {
        EXPECT_EQ(module_digest(*d), disc_before) << preset << " step " << step;
      }
    }
  }
}

TEST(AdaStepTest, UntrainedDiscriminatorLossesAreLn2) {
  auto m = testing::toy_model(1);
  auto d = testing::toy_disc(2);
  testing::zero_parameters(*d);
  const auto src = src_pairs();
  const auto tgt = tgt_pairs();
  auto opt_d = make_adamw(d->parameters(), Schedule{});
  auto opt_g = make_adamw(m->parameters(), Schedule{});
  DomainBatch s{{&src[0], &src[1]}};
  DomainBatch t{{&tgt[0], &tgt[1]}};
  EXPECT_NEAR(train_adversarial_step(s, t, m, d, *opt_g, {Group::kHead}), std::log(2.0), 1e-6);
  EXPECT_NEAR(train_discriminator_step(s, t, m, d, *opt_d), std::log(2.0), 1e-6);
}

std::vector<double> trace_of(const AdaResult& r) {
  std::vector<double> out;
  for (const auto& rec : r.log) {
    out.push_back(rec.l_seg);
    out.push_back(rec.l_d);
    out.push_back(rec.l_adv);
  }
  return out;
}

TEST(AdaRunTest, DeterministicUnderFixedSeed) {
  const auto cfg = tiny_config();
  const auto src = src_pairs();
  const auto tgt = tgt_pairs();
  std::vector<std::vector<double>> traces;
  std::vector<std::string> digests;
  for (int run = 0; run < 2; ++run) {
    auto m = testing::toy_model(11);
    auto d = testing::toy_disc(12);
    const auto r = run_ada(src, tgt, m, d, cfg);
    EXPECT_EQ(r.log.size(), 4U);
    EXPECT_EQ(r.optimizer_steps, 12);
    traces.push_back(trace_of(r));
    digests.push_back(module_digest(*m));
  }
  EXPECT_EQ(traces[0], traces[1]);
  EXPECT_EQ(digests[0], digests[1]);
}

TEST(AdaRunTest, ResumeReproducesUninterruptedTrace) {
  const auto cfg = tiny_config();
  const auto src = src_pairs();
  const auto tgt = tgt_pairs();
  const auto full_dir = testing::scratch_dir("ada_full");
  const auto cut_dir = testing::scratch_dir("ada_cut");
  {
    auto m = testing::toy_model(11);
    auto d = testing::toy_disc(12);
    RunOptions o;
    o.out_dir = full_dir;
    run_ada(src, tgt, m, d, cfg, o);
  }
  {
    auto m = testing::toy_model(11);
    auto d = testing::toy_disc(12);
    RunOptions o;
    o.out_dir = cut_dir;
    o.on_record = [](const nlohmann::json& rec) {
      if (rec["epoch"] == 1) throw std::runtime_error("interrupted");
    };
    EXPECT_THROW(run_ada(src, tgt, m, d, cfg, o), std::runtime_error);
  }
  {
    auto m = testing::toy_model(99);
    auto d = testing::toy_disc(98);
    RunOptions o;
    o.out_dir = cut_dir;
    o.resume = true;
    const auto r = run_ada(src, tgt, m, d, cfg, o);
    EXPECT_EQ(r.log.size(), 2U);
  }
  EXPECT_EQ(slurp(cut_dir / "ada_log.jsonl"), slurp(full_dir / "ada_log.jsonl"));
  auto a = testing::toy_model(0);
  auto b = testing::toy_model(0);
  load_checkpoint(full_dir / "ada.ckpt", a);
  load_checkpoint(cut_dir / "ada.ckpt", b);
  EXPECT_EQ(module_digest(*a), module_digest(*b));

  RunConfig other = cfg;
  other.freeze = FreezeConfig::preset("a111");
  auto m = testing::toy_model(11);
  auto d = testing::toy_disc(12);
  RunOptions o;
  o.out_dir = cut_dir;
  o.resume = true;
  EXPECT_THROW(run_ada(src, tgt, m, d, other, o), std::runtime_error);
}

TEST(SourceRunTest, DeterministicAndResumable) {
  auto cfg = tiny_config();
  const auto src = src_pairs();
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    auto m = testing::toy_model(5);
    const auto r = run_source_training(src, m, cfg);
    std::vector<double> t;
    for (const auto& rec : r.log) t.push_back(rec.l_seg);
    if (run == 0) first = t;
    else EXPECT_EQ(t, first);
  }
  const auto dir = testing::scratch_dir("src_cut");
  {
    auto m = testing::toy_model(5);
    RunOptions o;
    o.out_dir = dir;
    o.on_record = [](const nlohmann::json& rec) {
      if (rec["epoch"] == 1) throw std::runtime_error("interrupted");
    };
    EXPECT_THROW(run_source_training(src, m, cfg, o), std::runtime_error);
  }
  auto m = testing::toy_model(6);
  RunOptions o;
  o.out_dir = dir;
  o.resume = true;
  const auto r = run_source_training(src, m, cfg, o);
  ASSERT_EQ(r.log.size(), 2U);
  EXPECT_EQ(r.log[0].l_seg, first[2]);
  EXPECT_EQ(r.log[1].l_seg, first[3]);
}

std::vector<double> mlft_trace(const MlftResult& r) {
  std::vector<double> out;
  for (const auto& rec : r.log) {
    for (const char* k : {"L_FT", "L_CM", "L_S", "L_ML"}) out.push_back(rec[k].get<double>());
  }
  return out;
}

TEST(MlftRunTest, DeterministicAndResumable) {
  const auto cfg = tiny_config();
  const auto src = src_pairs();
  const auto truth = tgt_pairs(true);
  auto tgt = truth;
  for (auto& p : tgt) p.mask.reset();
  const std::vector<ImagePair> micro{truth[1]};

  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    auto m = testing::toy_model(21);
    const auto r = run_mlft(tgt, src, micro, m, cfg);
    // 3 unlabeled samples, 2 per batch: 2 iterations per epoch.
    EXPECT_EQ(r.log.size(), 4U);
    if (run == 0) first = mlft_trace(r);
    else EXPECT_EQ(mlft_trace(r), first);
  }

  const auto dir = testing::scratch_dir("mlft_cut");
  {
    auto m = testing::toy_model(21);
    RunOptions o;
    o.out_dir = dir;
    o.on_record = [](const nlohmann::json& rec) {
      if (rec["epoch"] == 1) throw std::runtime_error("interrupted");
    };
    EXPECT_THROW(run_mlft(tgt, src, micro, m, cfg, o), std::runtime_error);
  }
  auto m = testing::toy_model(22);
  RunOptions o;
  o.out_dir = dir;
  o.resume = true;
  const auto r = run_mlft(tgt, src, micro, m, cfg, o);
  const auto resumed = mlft_trace(r);
  ASSERT_EQ(resumed.size(), 8U);
  EXPECT_EQ(std::vector<double>(first.begin() + 8, first.end()), resumed);

  std::ifstream log(dir / "mlft_log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, 4);
}

TEST(MlftRunTest, RejectsMissingLabels) {
  const auto cfg = tiny_config();
  const auto src = src_pairs();
  auto tgt = tgt_pairs();
  auto m = testing::toy_model(1);
  EXPECT_THROW(run_mlft(tgt, src, {}, m, cfg), std::invalid_argument);
  EXPECT_THROW(run_mlft(tgt, src, {tgt[0]}, m, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace cdadapt
