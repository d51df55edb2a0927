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

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "cdadapt/checkpoint.hpp"
#include "cdadapt/data_pipeline.hpp"
#include "cdadapt/inference.hpp"
#include "cdadapt/losses.hpp"

namespace cdadapt {
namespace fs = std::filesystem;
using nlohmann::json;

bool score_order(const SampleScore& a, const SampleScore& b) {
  if (a.target_prob != b.target_prob) return a.target_prob > b.target_prob;
  return a.sample_id < b.sample_id;
}

std::vector<SampleScore> score_samples(const std::vector<ImagePair>& tgt, ChangeDetector& model,
                                       Discriminator& disc, int batch_size) {
  if (tgt.empty()) throw std::invalid_argument("score_samples: empty target dataset");
  torch::NoGradGuard no_grad;
  model->eval();
  disc->eval();
  std::vector<SampleScore> scores;
  scores.reserve(tgt.size());
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < tgt.size(); start += bs) {
    const std::size_t n = std::min(bs, tgt.size() - start);
    auto batch = make_batch(std::span<const ImagePair>(tgt.data() + start, n));
    auto pred = model->forward(batch.t1, batch.t2);
    // Averaged in double so near-equal scores keep a stable order.
    auto logits = disc->forward(pred.d_input).to(torch::kFloat64);
    auto tp = (1.0 - torch::sigmoid(logits)).mean({1, 2, 3});
    auto change_frac = (pred.prob > kBinarizeThreshold).to(torch::kFloat64).mean({1, 2, 3});
    for (std::size_t i = 0; i < n; ++i) {
      scores.push_back({batch.ids[i], tp[static_cast<int64_t>(i)].item<double>(),
                        change_frac[static_cast<int64_t>(i)].item<double>()});
    }
  }
  model->train();
  disc->train();
  std::sort(scores.begin(), scores.end(), score_order);
  return scores;
}

std::vector<std::string> Selection::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.sample_id);
  return out;
}

Selection select_for_labeling(std::vector<SampleScore> scores, int k, double min_change_frac) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (min_change_frac < 0 || min_change_frac >= 1) {
    throw std::invalid_argument("min_change_frac must lie in [0, 1)");
  }
  if (static_cast<std::size_t>(k) > scores.size()) {
    throw std::invalid_argument("k = " + std::to_string(k) + " exceeds the " +
                                std::to_string(scores.size()) + " scored samples");
  }
  std::sort(scores.begin(), scores.end(), score_order);
  std::vector<const SampleScore*> kept;
  std::vector<const SampleScore*> dropped;
  for (const auto& s : scores) (s.change_frac < min_change_frac ? dropped : kept).push_back(&s);

  Selection sel;
  auto add = [&](const SampleScore* s, bool backfilled) {
    sel.entries.push_back({s->sample_id, static_cast<int>(sel.entries.size()) + 1, s->target_prob,
                           s->change_frac, backfilled});
  };
  for (const auto* s : kept) {
    if (sel.entries.size() == static_cast<std::size_t>(k)) break;
    add(s, false);
  }
  for (const auto* s : dropped) {
    if (sel.entries.size() == static_cast<std::size_t>(k)) break;
    add(s, true);
    ++sel.backfilled;
  }
  return sel;
}

void write_selection_report(const fs::path& path, const Selection& sel) {
  json rows = json::array();
  for (const auto& e : sel.entries) {
    rows.push_back({{"sample_id", e.sample_id},
                    {"rank", e.rank},
                    {"target_prob", e.target_prob},
                    {"change_frac", e.change_frac},
                    {"backfilled", e.backfilled}});
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path) << json{{"schema_version", 1}, {"backfilled", sel.backfilled}, {"selection", rows}}.dump(2)
                      << '\n';
}

Selection read_selection_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open selection report " + path.string());
  const json j = json::parse(in);
  Selection sel;
  sel.backfilled = j.value("backfilled", 0);
  for (const auto& r : j.at("selection")) {
    sel.entries.push_back({r.at("sample_id").get<std::string>(), r.at("rank").get<int>(),
                           r.value("target_prob", 0.0), r.value("change_frac", 0.0),
                           r.value("backfilled", false)});
  }
  return sel;
}

PairBatch perturbed_batch(std::span<const ImagePair* const> pairs, std::uint64_t seed) {
  std::vector<ImagePair> views;
  views.reserve(pairs.size());
  for (const ImagePair* p : pairs) {
    ImagePair v;
    v.id = p->id;
    v.domain = p->domain;
    v.t1 = apply_chain(p->t1, draw_strong_chain(seed, p->id, 0));
    v.t2 = apply_chain(p->t2, draw_strong_chain(seed, p->id, 1));
    views.push_back(std::move(v));
  }
  return make_batch(std::span<const ImagePair>(views));
}

CdMatchResult cdmatch_losses(ChangeDetector& model, const PairBatch& clean,
                             const PairBatch& perturbed, const CdMatchConfig& cfg) {
  CdMatchResult out;
  auto fused = model->extract(clean.t1, clean.t2);
  {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> detached;
    for (const auto& f : fused) detached.push_back(f.detach());
    auto p = model->decode(detached).prob;
    out.pseudo_label = (p > kBinarizeThreshold).to(p.dtype());
    out.confidence = torch::max(p, 1.0 - p) >= cfg.confidence;
  }
  out.logits_fp = model->decode(feature_perturb(fused, cfg.fp_rate)).logits;
  out.logits_s = model->forward(perturbed.t1, perturbed.t2).logits;
  int64_t n = 0;
  auto l_fp = masked_bce_with_logits(out.logits_fp, out.pseudo_label, out.confidence, &n);
  auto l_s = masked_bce_with_logits(out.logits_s, out.pseudo_label, out.confidence);
  out.confident = n;
  out.loss = (l_fp + l_s) / 2.0;
  return out;
}

FinetuneComponents finetune_objective(ChangeDetector& model, const FinetuneInputs& in,
                                      const LossWeights& weights, const CdMatchConfig& cfg) {
  if (!in.labeled_tgt.mask.defined()) {
    throw std::invalid_argument("finetune: micro-labeled target samples must carry masks");
  }
  if (!in.labeled_src.mask.defined()) {
    throw std::invalid_argument("finetune: source samples must carry masks");
  }
  FinetuneComponents c;
  auto cm = cdmatch_losses(model, in.unlabeled, in.unlabeled_perturbed, cfg);
  c.cm = cm.loss;
  c.confident = cm.confident;
  auto src_logits = model->forward(in.labeled_src.t1, in.labeled_src.t2).logits;
  c.s = bce_with_logits(src_logits, in.labeled_src.mask.to(src_logits.dtype()));
  auto ml_logits = model->forward(in.labeled_tgt.t1, in.labeled_tgt.t2).logits;
  c.ml = bce_with_logits(ml_logits, in.labeled_tgt.mask.to(ml_logits.dtype()));
  c.total = weights.alpha * c.cm + weights.beta * c.s + weights.gamma * c.ml;
  return c;
}

FinetuneStepResult finetune_step(ChangeDetector& model, const FinetuneInputs& in,
                                 const LossWeights& weights, const CdMatchConfig& cfg,
                                 torch::optim::Optimizer& opt, const std::vector<Group>& trainable) {
  model->train();
  GradScope scope(model, trainable);
  opt.zero_grad();
  auto c = finetune_objective(model, in, weights, cfg);
  c.total.backward();
  opt.step();
  return {c.total.item<double>(), c.cm.item<double>(), c.s.item<double>(), c.ml.item<double>(),
          c.confident};
}

MlftResult run_mlft(const std::vector<ImagePair>& tgt, const std::vector<ImagePair>& src,
                    const std::vector<ImagePair>& micro_labels, ChangeDetector& model,
                    const RunConfig& cfg, const RunOptions& options) {
  cfg.validate();
  if (micro_labels.empty()) throw std::invalid_argument("run_mlft: no micro-labels supplied");
  for (const auto& p : micro_labels) {
    if (!p.mask) throw std::invalid_argument("run_mlft: micro-label '" + p.id + "' has no mask");
  }
  if (src.empty()) throw std::invalid_argument("run_mlft: empty source dataset");
  std::set<std::string> labeled_ids;
  for (const auto& p : micro_labels) labeled_ids.insert(p.id);
  std::vector<ImagePair> unlabeled;
  for (const auto& p : tgt) {
    if (!labeled_ids.contains(p.id)) {
      ImagePair u = p;
      u.mask.reset();
      unlabeled.push_back(std::move(u));
    }
  }
  if (unlabeled.empty()) throw std::invalid_argument("run_mlft: no unlabeled target samples");

  const auto groups = cfg.mlft_freeze.groups();
  auto opt = make_adamw(collect_parameters(model, groups), cfg.mlft);
  const NamedOptimizers named{{"ft", opt.get()}};

  MlftResult result;
  const fs::path ckpt = options.out_dir.empty() ? fs::path{} : options.out_dir / "mlft.ckpt";
  int start_epoch = 0;
  if (options.resume && !ckpt.empty() && fs::exists(ckpt)) {
    const CheckpointMeta meta = read_checkpoint_meta(ckpt);
    if (meta.stage != "mlft" || meta.config_hash != cfg.hash()) {
      throw std::runtime_error("cannot resume from " + ckpt.string() + ": stage or configuration differs");
    }
    load_checkpoint(ckpt, model, nullptr, named);
    start_epoch = meta.epochs_done;
  }
  JsonlLog log;
  if (!options.out_dir.empty()) log = JsonlLog(options.out_dir / "mlft_log.jsonl", options.resume, start_epoch);

  const auto nu = static_cast<std::size_t>(cfg.mlft_batch.n_unlabeled_tgt);
  const auto nl = static_cast<std::size_t>(cfg.mlft_batch.n_labeled_tgt);
  const auto ns = static_cast<std::size_t>(cfg.mlft_batch.n_labeled_src);
  std::vector<std::size_t> label_order(micro_labels.size());
  std::iota(label_order.begin(), label_order.end(), std::size_t{0});
  const int iters = static_cast<int>((unlabeled.size() + nu - 1) / nu);

  for (int epoch = start_epoch; epoch < cfg.mlft.epochs; ++epoch) {
    const double lr = cfg.mlft.lr_at(epoch);
    set_learning_rate(*opt, lr);
    const auto order_u = epoch_permutation(unlabeled.size(), derive_seed(cfg.seed, 5), epoch);
    const auto order_s = epoch_permutation(src.size(), derive_seed(cfg.seed, 6), epoch);
    for (int it = 0; it < iters; ++it) {
      const auto global = static_cast<std::uint64_t>(epoch) * iters + it;
      torch::manual_seed(derive_seed(cfg.seed, 0x3f7ULL, global));
      const auto cursor = static_cast<std::size_t>(it);
      const auto unl = take_cyclic(unlabeled, order_u, cursor * nu, nu);
      const auto lab = take_cyclic(micro_labels, label_order, static_cast<std::size_t>(global) * nl, nl);
      const auto srcb = take_cyclic(src, order_s, cursor * ns, ns);
      FinetuneInputs in{make_batch(std::span<const ImagePair* const>(unl)),
                        perturbed_batch(unl, derive_seed(cfg.seed, 0x5151ULL, global)),
                        make_batch(std::span<const ImagePair* const>(lab)),
                        make_batch(std::span<const ImagePair* const>(srcb))};
      const auto step = finetune_step(model, in, cfg.weights, cfg.cdmatch, *opt, groups);
      if (step.confident == 0) {
        ++result.zero_confidence_batches;
        if (!options.quiet) std::cerr << "warning: no confident pseudo-label pixels at iter " << global << '\n';
      }
      json rec{{"iter", global},      {"epoch", epoch},   {"L_FT", step.total}, {"L_CM", step.cm},
               {"L_S", step.s},       {"L_ML", step.ml},  {"confident", step.confident},
               {"lr", lr}};
      log.append(rec);
      if (!options.quiet) std::cout << rec.dump() << '\n';
      if (options.on_record) options.on_record(rec);
      result.log.push_back(std::move(rec));
    }
    result.epochs_done = epoch + 1;
    if (!ckpt.empty()) {
      CheckpointMeta meta;
      meta.stage = "mlft";
      meta.epochs_done = epoch + 1;
      meta.config_hash = cfg.hash();
      meta.network_hash = network_hash(cfg.network);
      meta.config = cfg;
      save_checkpoint(ckpt, model, nullptr, named, meta);
    }
  }
  return result;
}

}  // namespace cdadapt
