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

// Adversarial domain adaptation by alternating training.
//
// Every iteration runs three updates in order, one batch each:
//
//   1. source step       hybrid BCE + Dice on labeled source pairs;
//                        trains mt_fusion, ms_fusion and head
//   2. discriminator     mean-cell BCE of the logit map against the true
//                        domain (source = 1, target = 0); trains only the
//                        discriminator, d_input computed without gradient
//   3. adversarial       mean-cell BCE against the source label for both
//                        domains; trains the groups enabled by FreezeConfig
//                        (default a110: mt_fusion + ms_fusion)

#ifndef CDADAPT_ADA_TRAINER_HPP
#define CDADAPT_ADA_TRAINER_HPP

#include <span>
#include <vector>

#include <torch/torch.h>

#include "cdadapt/config.hpp"
#include "cdadapt/network.hpp"
#include "cdadapt/trainer_common.hpp"

namespace cdadapt {

/// A training batch with per-sample domain and label availability.
struct DomainBatch {
  std::vector<const ImagePair*> pairs;

  [[nodiscard]] std::size_t size() const { return pairs.size(); }
  [[nodiscard]] std::size_t count(Domain d) const;
  [[nodiscard]] bool all_masked() const;
};

/// Groups trained by the supervised source step (mt_fusion, ms_fusion, head,
/// plus the encoder when `freeze.train_encoder`).
std::vector<Group> source_step_groups(const FreezeConfig& freeze);

/// Step 1. Throws std::invalid_argument for non-source or unmasked samples.
double train_source_step(const DomainBatch& batch, ChangeDetector& model,
                         torch::optim::Optimizer& opt, const std::vector<Group>& trainable);

/// Step 2. Throws when the two batches differ in size.
double train_discriminator_step(const DomainBatch& src, const DomainBatch& tgt,
                                ChangeDetector& model, Discriminator& disc,
                                torch::optim::Optimizer& opt_d);

/// Step 3.
double train_adversarial_step(const DomainBatch& src, const DomainBatch& tgt,
                              ChangeDetector& model, Discriminator& disc,
                              torch::optim::Optimizer& opt_g, const std::vector<Group>& trainable);

struct AdaLogRecord {
  int iter = 0;
  int epoch = 0;
  double l_seg = 0;
  double l_d = 0;
  double l_adv = 0;
  double lr = 0;
};

nlohmann::json to_json(const AdaLogRecord& r);

struct AdaResult {
  std::vector<AdaLogRecord> log;
  long optimizer_steps = 0;
  int epochs_done = 0;
};

/// Cycles steps 1-3 for cfg.ada.epochs epochs; an epoch is
/// ceil(|src| / batch_step1) iterations. With out_dir set, writes
/// ada_log.jsonl and checkpoints ada.ckpt after every epoch.
AdaResult run_ada(const std::vector<ImagePair>& src, const std::vector<ImagePair>& tgt,
                  ChangeDetector& model, Discriminator& disc, const RunConfig& cfg,
                  const RunOptions& options = {});

struct SourceLogRecord {
  int iter = 0;
  int epoch = 0;
  double l_seg = 0;
  double lr = 0;
};

struct SourceResult {
  std::vector<SourceLogRecord> log;
  int epochs_done = 0;
};

/// Source-only supervised training of all four groups (the baseline model
/// and the starting point for adaptation). Writes source_log.jsonl and
/// source.ckpt when out_dir is set.
SourceResult run_source_training(const std::vector<ImagePair>& src, ChangeDetector& model,
                                 const RunConfig& cfg, const RunOptions& options = {});

}  // namespace cdadapt

#endif  // CDADAPT_ADA_TRAINER_HPP
