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

#include "cdadapt/mlft_trainer.hpp"

#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "cdadapt/checkpoint.hpp"
#include "cdadapt/data_pipeline.hpp"
#include "cdadapt/losses.hpp"
#include "cdadapt/trainer_common.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace cdadapt {
namespace {

const double kLn2 = std::log(2.0);

PairBatch batch_of(const std::vector<ImagePair>& pairs, torch::Dtype dtype = torch::kFloat64) {
  return testing::to_dtype(make_batch(std::span<const ImagePair>(pairs)), dtype);
}

FinetuneInputs toy_inputs(torch::Dtype dtype = torch::kFloat64) {
  auto unl = testing::random_pairs("u", 2, 32, 10, Domain::kTarget, false);
  std::vector<const ImagePair*> ptrs{&unl[0], &unl[1]};
  return {batch_of(unl, dtype), testing::to_dtype(perturbed_batch(ptrs, 77), dtype),
          batch_of(testing::random_pairs("l", 1, 32, 11, Domain::kTarget), dtype),
          batch_of(testing::random_pairs("s", 2, 32, 12, Domain::kSource), dtype)};
}

TEST(CdMatchTest, UniformPredictionGivesLn2) {
  auto m = testing::toy_model(1, torch::kFloat64);
  testing::zero_parameters(*m->head);
  const auto in = toy_inputs();
  CdMatchConfig cfg;
  cfg.confidence = 0.5;
  const auto r = cdmatch_losses(m, in.unlabeled, in.unlabeled_perturbed, cfg);
  EXPECT_NEAR(r.loss.item<double>(), kLn2, 1e-6);
  EXPECT_EQ(r.confident, 2 * 32 * 32);
  cfg.confidence = 0.95;
  const auto none = cdmatch_losses(m, in.unlabeled, in.unlabeled_perturbed, cfg);
  EXPECT_EQ(none.confident, 0);
  EXPECT_EQ(none.loss.item<double>(), 0.0);
}

TEST(CdMatchTest, AgreeingConfidentViewsGiveNearZero) {
  auto m = testing::toy_model(1, torch::kFloat64);
  testing::zero_parameters(*m->head);
  {
    torch::NoGradGuard no_grad;
    testing::named_parameter(*m, "head.up2.bias").fill_(20.0);
  }
  const auto in = toy_inputs();
  const auto r = cdmatch_losses(m, in.unlabeled, in.unlabeled_perturbed, CdMatchConfig{});
  EXPECT_EQ(r.confident, 2 * 32 * 32);
  EXPECT_EQ(r.pseudo_label.min().item<double>(), 1.0);
  EXPECT_LE(r.loss.item<double>(), 1e-6);
}

TEST(CdMatchTest, PseudoLabelsCarryNoGradient) {
  auto m = testing::toy_model(2, torch::kFloat64);
  const auto in = toy_inputs();
  CdMatchConfig cfg;
  cfg.confidence = 0.5;
  const auto r = cdmatch_losses(m, in.unlabeled, in.unlabeled_perturbed, cfg);
  EXPECT_FALSE(r.pseudo_label.requires_grad());
  EXPECT_FALSE(r.confidence.requires_grad());
  EXPECT_TRUE(r.loss.requires_grad());
}

TEST(CdMatchTest, MatchesReferenceFromLogits) {
  auto m = testing::toy_model(3, torch::kFloat64);
  const auto in = toy_inputs();
  for (double conf : {0.5, 0.501, 0.51}) {
    CdMatchConfig cfg;
    cfg.confidence = conf;
    torch::manual_seed(9);
    const auto r = cdmatch_losses(m, in.unlabeled, in.unlabeled_perturbed, cfg);
    const auto clean = m->forward(in.unlabeled.t1, in.unlabeled.t2).logits;
    const double ref = testing::cdmatch_reference(clean, r.logits_fp, r.logits_s, conf);
    EXPECT_NEAR(r.loss.item<double>(), ref, 1e-9) << conf;
  }
}

TEST(FinetuneObjectiveTest, MatchesPerPixelOracle) {
  auto m = testing::toy_model(4, torch::kFloat64);
  const auto in = toy_inputs();
  CdMatchConfig cfg;
  cfg.confidence = 0.5;
  const LossWeights w;

  torch::manual_seed(31);
  const auto cm = cdmatch_losses(m, in.unlabeled, in.unlabeled_perturbed, cfg);
  const auto clean = m->forward(in.unlabeled.t1, in.unlabeled.t2).logits;
  const double cm_ref = testing::cdmatch_reference(clean, cm.logits_fp, cm.logits_s, cfg.confidence);
  const double s_ref = testing::bce_reference(
      testing::to_doubles(m->forward(in.labeled_src.t1, in.labeled_src.t2).logits),
      testing::to_doubles(in.labeled_src.mask), {});
  const double ml_ref = testing::bce_reference(
      testing::to_doubles(m->forward(in.labeled_tgt.t1, in.labeled_tgt.t2).logits),
      testing::to_doubles(in.labeled_tgt.mask), {});

  torch::manual_seed(31);
  const auto c = finetune_objective(m, in, w, cfg);
  EXPECT_NEAR(c.cm.item<double>(), cm_ref, 1e-6);
  EXPECT_NEAR(c.s.item<double>(), s_ref, 1e-6);
  EXPECT_NEAR(c.ml.item<double>(), ml_ref, 1e-6);
  EXPECT_NEAR(c.total.item<double>(), w.alpha * cm_ref + w.beta * s_ref + w.gamma * ml_ref, 1e-6);
  EXPECT_GT(c.confident, 0);
}

TEST(FinetuneObjectiveTest, WeightsAreLinear) {
  auto m = testing::toy_model(5, torch::kFloat64);
  const auto in = toy_inputs();
  CdMatchConfig cfg;
  cfg.confidence = 0.5;
  torch::manual_seed(1);
  const auto base = finetune_objective(m, in, LossWeights{}, cfg);

  LossWeights only_ml{0.0, 0.0, 1.0};
  torch::manual_seed(1);
  const auto ml = finetune_objective(m, in, only_ml, cfg);
  EXPECT_NEAR(ml.total.item<double>(), ml.ml.item<double>(), 1e-12);

  const double lambda = 3.5;
  LossWeights scaled{lambda * 30.0 / 46.0, lambda * 1.0 / 46.0, lambda * 15.0 / 46.0};
  torch::manual_seed(1);
  const auto big = finetune_objective(m, in, scaled, cfg);
  EXPECT_NEAR(big.total.item<double>(), lambda * base.total.item<double>(), 1e-9);
}

TEST(FinetuneObjectiveTest, RequiresLabeledBatches) {
  auto m = testing::toy_model(5, torch::kFloat64);
  auto in = toy_inputs();
  in.labeled_tgt.mask = torch::Tensor();
  EXPECT_THROW(finetune_objective(m, in, LossWeights{}, CdMatchConfig{}), std::invalid_argument);
  in = toy_inputs();
  in.labeled_src.mask = torch::Tensor();
  EXPECT_THROW(finetune_objective(m, in, LossWeights{}, CdMatchConfig{}), std::invalid_argument);
}

TEST(FinetuneStepTest, OnlyTrainableGroupsMove) {
  auto m = testing::toy_model(6);
  const auto in = toy_inputs(torch::kFloat32);
  auto opt = make_adamw(m->parameters(), Schedule{});
  const auto enc = group_digest(m, Group::kEncoder);
  const auto head = group_digest(m, Group::kHead);
  const auto mt = group_digest(m, Group::kMtFusion);
  CdMatchConfig cfg;
  cfg.confidence = 0.5;
  finetune_step(m, in, LossWeights{}, cfg, *opt, {Group::kMtFusion, Group::kMsFusion});
  EXPECT_EQ(group_digest(m, Group::kEncoder), enc);
  EXPECT_EQ(group_digest(m, Group::kHead), head);
  EXPECT_NE(group_digest(m, Group::kMtFusion), mt);
}

TEST(PerturbedBatchTest, DeterministicAndPerFrame) {
  auto pairs = testing::random_pairs("p", 3, 32, 4, Domain::kTarget, false);
  std::vector<const ImagePair*> ptrs{&pairs[0], &pairs[1], &pairs[2]};
  const auto a = perturbed_batch(ptrs, 5);
  const auto b = perturbed_batch(ptrs, 5);
  EXPECT_TRUE(torch::equal(a.t1, b.t1));
  EXPECT_TRUE(torch::equal(a.t2, b.t2));
  EXPECT_FALSE(a.mask.defined());
  // Frames are perturbed independently, so the view differs per frame.
  const auto expect_t1 = image_to_tensor(apply_chain(pairs[1].t1, draw_strong_chain(5, "p001", 0)));
  const auto expect_t2 = image_to_tensor(apply_chain(pairs[1].t2, draw_strong_chain(5, "p001", 1)));
  EXPECT_TRUE(torch::equal(a.t1[1], expect_t1));
  EXPECT_TRUE(torch::equal(a.t2[1], expect_t2));
}

// --- selection ---------------------------------------------------------------

TEST(SelectionTest, FilterTopKAndBackfill) {
  std::vector<SampleScore> s{{"a", 0.9, 0.0}, {"b", 0.8, 0.1}, {"c", 0.8, 0.2},
                             {"d", 0.7, 0.001}, {"e", 0.6, 0.3}};
  auto sel = select_for_labeling(s, 3, 0.005);
  EXPECT_EQ(sel.ids(), (std::vector<std::string>{"b", "c", "e"}));
  EXPECT_EQ(sel.backfilled, 0);
  EXPECT_EQ(sel.entries[0].rank, 1);
  EXPECT_EQ(sel.entries[2].rank, 3);

  sel = select_for_labeling(s, 5, 0.005);
  EXPECT_EQ(sel.ids(), (std::vector<std::string>{"b", "c", "e", "a", "d"}));
  EXPECT_EQ(sel.backfilled, 2);
  EXPECT_TRUE(sel.entries[3].backfilled);
  EXPECT_FALSE(sel.entries[2].backfilled);

  EXPECT_THROW(select_for_labeling(s, 6, 0.005), std::invalid_argument);
  EXPECT_THROW(select_for_labeling(s, 0, 0.005), std::invalid_argument);
  EXPECT_THROW(select_for_labeling(s, 2, 1.0), std::invalid_argument);
}

void expect_matches_oracle(const std::vector<ImagePair>& tgt, ChangeDetector& m, Discriminator& d) {
  const auto scores = score_samples(tgt, m, d);
  auto ref = testing::brute_force_scores(tgt, m, d);
  ASSERT_EQ(scores.size(), ref.size());
  std::map<std::string, SampleScore> by_id;
  for (const auto& r : ref) by_id[r.sample_id] = r;
  for (const auto& s : scores) {
    EXPECT_NEAR(s.target_prob, by_id.at(s.sample_id).target_prob, 1e-6);
    EXPECT_EQ(s.change_frac, by_id.at(s.sample_id).change_frac);
  }
  std::vector<double> fracs;
  for (const auto& r : ref) fracs.push_back(r.change_frac);
  std::sort(fracs.begin(), fracs.end());
  for (double thr : {0.0, fracs[30], fracs[90]}) {
    for (int k : {1, 8, 16, 50, 100}) {
      const auto sel = select_for_labeling(scores, k, std::min(thr, 0.999));
      EXPECT_EQ(sel.ids(), testing::brute_force_selection(ref, k, std::min(thr, 0.999)))
          << "k " << k << " thr " << thr;
    }
  }
}

TEST(SelectionTest, MatchesBruteForceOnHundredSamples) {
  const auto tgt = testing::random_pairs("t", 100, 32, 8, Domain::kTarget, false);
  auto m = testing::toy_model(13);
  auto d = testing::toy_disc(14);
  expect_matches_oracle(tgt, m, d);
}

TEST(SelectionTest, ZeroDiscriminatorTiesBreakById) {
  const auto tgt = testing::random_pairs("t", 100, 32, 9, Domain::kTarget, false);
  auto m = testing::toy_model(13);
  auto d = testing::toy_disc(14);
  testing::zero_parameters(*d);
  const auto scores = score_samples(tgt, m, d);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    EXPECT_EQ(scores[i].target_prob, 0.5);
    EXPECT_EQ(scores[i].sample_id, tgt[i].id);
  }
  expect_matches_oracle(tgt, m, d);
}

TEST(SelectionTest, ReportRoundTrip) {
  const auto dir = testing::scratch_dir("selection");
  std::vector<SampleScore> s{{"x1", 0.9, 0.2}, {"x2", 0.4, 0.0}};
  const auto sel = select_for_labeling(s, 2, 0.01);
  write_selection_report(dir / "r.json", sel);
  const auto back = read_selection_report(dir / "r.json");
  ASSERT_EQ(back.entries.size(), 2U);
  EXPECT_EQ(back.backfilled, 1);
  EXPECT_EQ(back.entries[1].sample_id, "x2");
  EXPECT_TRUE(back.entries[1].backfilled);
  EXPECT_EQ(back.entries[0].target_prob, 0.9);
  EXPECT_THROW(read_selection_report(dir / "none.json"), std::runtime_error);
}

}  // namespace
}  // namespace cdadapt
