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

#include "cdadapt/ada_trainer.hpp"

#include <algorithm>
#include <iostream>
#include <stdexcept>

#include "cdadapt/checkpoint.hpp"
#include "cdadapt/data_pipeline.hpp"
#include "cdadapt/losses.hpp"

namespace cdadapt {
namespace fs = std::filesystem;

std::size_t DomainBatch::count(Domain d) const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [d](const ImagePair* p) { return p->domain == d; }));
}

bool DomainBatch::all_masked() const {
  return std::all_of(pairs.begin(), pairs.end(), [](const ImagePair* p) { return p->mask.has_value(); });
}

std::vector<Group> source_step_groups(const FreezeConfig& freeze) {
  std::vector<Group> g{Group::kMtFusion, Group::kMsFusion, Group::kHead};
  if (freeze.train_encoder) g.insert(g.begin(), Group::kEncoder);
  return g;
}

namespace {

PairBatch joint_batch(const DomainBatch& src, const DomainBatch& tgt) {
  if (src.size() == 0 || src.size() != tgt.size()) {
    throw std::invalid_argument("source and target batches must be non-empty and of equal size");
  }
  std::vector<const ImagePair*> all(src.pairs);
  all.insert(all.end(), tgt.pairs.begin(), tgt.pairs.end());
  return make_batch(std::span<const ImagePair* const>(all));
}

/// 1 for the first `n_src` samples, 0 for the rest, broadcast to the map.
torch::Tensor domain_targets(const torch::Tensor& logit_map, int64_t n_src) {
  auto labels = torch::zeros({logit_map.size(0), 1, 1, 1}, logit_map.options());
  labels.narrow(0, 0, n_src).fill_(kSourceLabel);
  return labels.expand_as(logit_map);
}

}  // namespace

double train_source_step(const DomainBatch& batch, ChangeDetector& model,
                         torch::optim::Optimizer& opt, const std::vector<Group>& trainable) {
  if (batch.size() == 0) throw std::invalid_argument("empty source batch");
  if (!batch.all_masked()) throw std::invalid_argument("source step requires a mask for every sample");
  if (batch.count(Domain::kTarget) != 0) {
    throw std::invalid_argument("source step received target-domain samples");
  }
  model->train();
  GradScope scope(model, trainable);
  const PairBatch b = make_batch(std::span<const ImagePair* const>(batch.pairs));
  opt.zero_grad();
  auto pred = model->forward(b.t1, b.t2);
  auto loss = hybrid_seg_loss(pred.logits, b.mask.to(pred.logits.dtype()));
  loss.backward();
  opt.step();
  return loss.item<double>();
}

double train_discriminator_step(const DomainBatch& src, const DomainBatch& tgt,
                                ChangeDetector& model, Discriminator& disc,
                                torch::optim::Optimizer& opt_d) {
  const PairBatch b = joint_batch(src, tgt);
  torch::Tensor d_input;
  {
    torch::NoGradGuard no_grad;
    GradScope frozen(model, {});
    d_input = model->forward(b.t1, b.t2).d_input;
  }
  disc->train();
  ModuleGradScope trainable(*disc, true);
  opt_d.zero_grad();
  auto logits = disc->forward(d_input);
  auto loss = bce_with_logits(logits, domain_targets(logits, static_cast<int64_t>(src.size())));
  loss.backward();
  opt_d.step();
  return loss.item<double>();
}

double train_adversarial_step(const DomainBatch& src, const DomainBatch& tgt,
                              ChangeDetector& model, Discriminator& disc,
                              torch::optim::Optimizer& opt_g, const std::vector<Group>& trainable) {
  const PairBatch b = joint_batch(src, tgt);
  model->train();
  GradScope scope(model, trainable);
  ModuleGradScope frozen(*disc, false);
  opt_g.zero_grad();
  auto pred = model->forward(b.t1, b.t2);
  auto loss = domain_bce(disc->forward(pred.d_input), kSourceLabel);
  loss.backward();
  opt_g.step();
  return loss.item<double>();
}

nlohmann::json to_json(const AdaLogRecord& r) {
  return {{"iter", r.iter}, {"epoch", r.epoch}, {"L_seg", r.l_seg},
          {"L_D", r.l_d},   {"L_adv", r.l_adv}, {"lr", r.lr}};
}

namespace {

CheckpointMeta make_meta(const std::string& stage, int epochs_done, const RunConfig& cfg) {
  CheckpointMeta meta;
  meta.stage = stage;
  meta.epochs_done = epochs_done;
  meta.config_hash = cfg.hash();
  meta.network_hash = network_hash(cfg.network);
  meta.config = cfg;
  return meta;
}

int resume_from(const fs::path& ckpt, const std::string& stage, const RunConfig& cfg,
                ChangeDetector& model, Discriminator* disc, const NamedOptimizers& opts) {
  // Check the metadata first: optimizer states of another configuration may
  // not even fit the current parameter groups.
  const CheckpointMeta meta = read_checkpoint_meta(ckpt);
  if (meta.stage != stage) {
    throw std::runtime_error("cannot resume: " + ckpt.string() + " is a '" + meta.stage +
                             "' checkpoint");
  }
  if (meta.config_hash != cfg.hash()) {
    throw std::runtime_error("cannot resume: configuration hash differs from " + ckpt.string());
  }
  load_checkpoint(ckpt, model, disc, opts);
  return meta.epochs_done;
}

void emit(const RunOptions& options, JsonlLog& log, const nlohmann::json& rec) {
  log.append(rec);
  if (!options.quiet) std::cout << rec.dump() << '\n';
  if (options.on_record) options.on_record(rec);
}

}  // namespace

AdaResult run_ada(const std::vector<ImagePair>& src, const std::vector<ImagePair>& tgt,
                  ChangeDetector& model, Discriminator& disc, const RunConfig& cfg,
                  const RunOptions& options) {
  cfg.validate();
  if (src.empty() || tgt.empty()) throw std::invalid_argument("run_ada: empty dataset");
  const auto seg_groups = source_step_groups(cfg.freeze);
  const auto adv_groups = cfg.freeze.groups();
  auto opt_seg = make_adamw(collect_parameters(model, seg_groups), cfg.ada);
  auto opt_d = make_adamw(disc->parameters(), cfg.ada);
  auto opt_g = make_adamw(collect_parameters(model, adv_groups), cfg.ada);
  const NamedOptimizers named{{"seg", opt_seg.get()}, {"disc", opt_d.get()}, {"adv", opt_g.get()}};

  AdaResult result;
  const fs::path ckpt = options.out_dir.empty() ? fs::path{} : options.out_dir / "ada.ckpt";
  int start_epoch = 0;
  if (options.resume && !ckpt.empty() && fs::exists(ckpt)) {
    start_epoch = resume_from(ckpt, "ada", cfg, model, &disc, named);
  }
  JsonlLog log;
  if (!options.out_dir.empty()) log = JsonlLog(options.out_dir / "ada_log.jsonl", options.resume, start_epoch);

  const auto b1 = static_cast<std::size_t>(cfg.ada.batch_step1);
  const auto b23 = static_cast<std::size_t>(cfg.ada.batch_step23_per_domain);
  const int iters = static_cast<int>((src.size() + b1 - 1) / b1);
  for (int epoch = start_epoch; epoch < cfg.ada.epochs; ++epoch) {
    const double lr = cfg.ada.lr_at(epoch);
    for (const auto& [name, opt] : named) set_learning_rate(*opt, lr);
    const auto order1 = epoch_permutation(src.size(), derive_seed(cfg.seed, 1), epoch);
    const auto order_s = epoch_permutation(src.size(), derive_seed(cfg.seed, 2), epoch);
    const auto order_t = epoch_permutation(tgt.size(), derive_seed(cfg.seed, 3), epoch);
    for (int it = 0; it < iters; ++it) {
      const std::size_t cursor = static_cast<std::size_t>(it);
      DomainBatch step1{take_cyclic(src, order1, cursor * b1, b1)};
      DomainBatch s23{take_cyclic(src, order_s, cursor * b23, b23)};
      DomainBatch t23{take_cyclic(tgt, order_t, cursor * b23, b23)};
      AdaLogRecord rec;
      rec.iter = epoch * iters + it;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.l_seg = train_source_step(step1, model, *opt_seg, seg_groups);
      rec.l_d = train_discriminator_step(s23, t23, model, disc, *opt_d);
      rec.l_adv = train_adversarial_step(s23, t23, model, disc, *opt_g, adv_groups);
      result.optimizer_steps += 3;
      result.log.push_back(rec);
      emit(options, log, to_json(rec));
    }
    result.epochs_done = epoch + 1;
    if (!ckpt.empty()) save_checkpoint(ckpt, model, &disc, named, make_meta("ada", epoch + 1, cfg));
  }
  return result;
}

SourceResult run_source_training(const std::vector<ImagePair>& src, ChangeDetector& model,
                                 const RunConfig& cfg, const RunOptions& options) {
  cfg.validate();
  if (src.empty()) throw std::invalid_argument("run_source_training: empty dataset");
  const std::vector<Group> groups(kAllGroups.begin(), kAllGroups.end());
  auto opt = make_adamw(collect_parameters(model, groups), cfg.source);
  const NamedOptimizers named{{"seg", opt.get()}};

  SourceResult result;
  const fs::path ckpt = options.out_dir.empty() ? fs::path{} : options.out_dir / "source.ckpt";
  int start_epoch = 0;
  if (options.resume && !ckpt.empty() && fs::exists(ckpt)) {
    start_epoch = resume_from(ckpt, "source", cfg, model, nullptr, named);
  }
  JsonlLog log;
  if (!options.out_dir.empty()) {
    log = JsonlLog(options.out_dir / "source_log.jsonl", options.resume, start_epoch);
  }

  const auto b = static_cast<std::size_t>(cfg.source.batch);
  const int iters = static_cast<int>((src.size() + b - 1) / b);
  for (int epoch = start_epoch; epoch < cfg.source.epochs; ++epoch) {
    const double lr = cfg.source.lr_at(epoch);
    set_learning_rate(*opt, lr);
    const auto order = epoch_permutation(src.size(), derive_seed(cfg.seed, 4), epoch);
    for (int it = 0; it < iters; ++it) {
      DomainBatch batch{take_cyclic(src, order, static_cast<std::size_t>(it) * b, b)};
      SourceLogRecord rec{epoch * iters + it, epoch, 0.0, lr};
      rec.l_seg = train_source_step(batch, model, *opt, groups);
      result.log.push_back(rec);
      emit(options, log,
           {{"iter", rec.iter}, {"epoch", rec.epoch}, {"L_seg", rec.l_seg}, {"lr", rec.lr}});
    }
    result.epochs_done = epoch + 1;
    if (!ckpt.empty()) {
      CheckpointMeta meta = make_meta("source", epoch + 1, cfg);
      save_checkpoint(ckpt, model, nullptr, named, meta);
    }
  }
  return result;
}

}  // namespace cdadapt
