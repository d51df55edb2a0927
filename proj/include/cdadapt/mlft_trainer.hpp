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

// Micro-labeled fine-tuning.
//
// Selection: target samples are ranked by the discriminator's mean
// predicted-target probability (highest first, ties by sample id); samples
// whose predicted change fraction is below a floor are skipped, then the
// top k are sent for annotation.
//
// Fine-tuning objective:
//
//   L_FT = alpha * L_CM + beta * L_S + gamma * L_ML
//   L_CM = (BCE(y, p_fp) + BCE(y, p_s1s2)) / 2     over confident pixels
//
// where y = 1[p > 0.5] is the hardened clean prediction (no gradient),
// p_fp = h(FP(g(t1, t2))) with channel dropout as FP, and
// p_s1s2 = h(g(S1(t1), S2(t2))) with independent strong photometric
// perturbations per frame.

#ifndef CDADAPT_MLFT_TRAINER_HPP
#define CDADAPT_MLFT_TRAINER_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cdadapt/config.hpp"
#include "cdadapt/network.hpp"
#include "cdadapt/trainer_common.hpp"

namespace cdadapt {

struct SampleScore {
  std::string sample_id;
  double target_prob = 0;  // mean over logit-map cells of 1 - sigmoid(logit)
  double change_frac = 0;  // fraction of pixels with prob > 0.5
};

/// Descending target_prob, ties broken by ascending sample_id.
bool score_order(const SampleScore& a, const SampleScore& b);

/// Scores and sorts every target sample. Throws on an empty dataset.
std::vector<SampleScore> score_samples(const std::vector<ImagePair>& tgt, ChangeDetector& model,
                                       Discriminator& disc, int batch_size = 16);

struct SelectionEntry {
  std::string sample_id;
  int rank = 0;  // 1-based
  double target_prob = 0;
  double change_frac = 0;
  bool backfilled = false;
};

struct Selection {
  std::vector<SelectionEntry> entries;
  int backfilled = 0;

  [[nodiscard]] std::vector<std::string> ids() const;
};

/// Drops scores with change_frac < min_change_frac, keeps the top k in score
/// order and backfills from the dropped ones (also in score order) when fewer
/// than k survive. Throws when k exceeds the number of scores.
Selection select_for_labeling(std::vector<SampleScore> scores, int k, double min_change_frac);

void write_selection_report(const std::filesystem::path& path, const Selection& sel);
Selection read_selection_report(const std::filesystem::path& path);

/// Applies an independent strong-perturbation chain to each frame, seeded by
/// (seed, sample id, frame index).
PairBatch perturbed_batch(std::span<const ImagePair* const> pairs, std::uint64_t seed);

struct CdMatchResult {
  torch::Tensor loss;          // scalar; 0 when no pixel is confident
  int64_t confident = 0;       // confident pixels per branch
  torch::Tensor pseudo_label;  // y, B x 1 x H x W
  torch::Tensor confidence;    // selection mask, B x 1 x H x W
  torch::Tensor logits_fp;
  torch::Tensor logits_s;
};

/// Consistency loss over an unlabeled batch (clean and perturbed views).
CdMatchResult cdmatch_losses(ChangeDetector& model, const PairBatch& clean,
                             const PairBatch& perturbed, const CdMatchConfig& cfg);

struct FinetuneComponents {
  torch::Tensor total;
  torch::Tensor cm;
  torch::Tensor s;
  torch::Tensor ml;
  int64_t confident = 0;
};

struct FinetuneInputs {
  PairBatch unlabeled;
  PairBatch unlabeled_perturbed;
  PairBatch labeled_tgt;
  PairBatch labeled_src;
};

/// Computes L_FT and its components without stepping. Throws when the
/// labeled target batch carries no masks.
FinetuneComponents finetune_objective(ChangeDetector& model, const FinetuneInputs& in,
                                      const LossWeights& weights, const CdMatchConfig& cfg);

struct FinetuneStepResult {
  double total = 0;
  double cm = 0;
  double s = 0;
  double ml = 0;
  int64_t confident = 0;
};

/// One optimizer step on L_FT restricted to `trainable`.
FinetuneStepResult finetune_step(ChangeDetector& model, const FinetuneInputs& in,
                                 const LossWeights& weights, const CdMatchConfig& cfg,
                                 torch::optim::Optimizer& opt, const std::vector<Group>& trainable);

struct MlftResult {
  std::vector<nlohmann::json> log;
  int epochs_done = 0;
  int zero_confidence_batches = 0;
};

/// Fine-tunes on the target pool (micro-labeled ids excluded from the
/// unlabeled stream) plus the labeled source set. One epoch is
/// ceil(|unlabeled| / n_unlabeled_tgt) iterations; the labeled target samples
/// are cycled round-robin. Writes mlft_log.jsonl / mlft.ckpt when out_dir is set.
MlftResult run_mlft(const std::vector<ImagePair>& tgt, const std::vector<ImagePair>& src,
                    const std::vector<ImagePair>& micro_labels, ChangeDetector& model,
                    const RunConfig& cfg, const RunOptions& options = {});

}  // namespace cdadapt

#endif  // CDADAPT_MLFT_TRAINER_HPP
