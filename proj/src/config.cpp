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
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cdadapt/data_pipeline.hpp"

namespace cdadapt {
using nlohmann::json;

FreezeConfig FreezeConfig::preset(std::string_view name) {
  if (name.size() != 4 || name[0] != 'a') {
    throw std::invalid_argument("unknown freeze preset '" + std::string(name) + "'");
  }
  static constexpr std::string_view kPresets[] = {"a100", "a010", "a001", "a111", "a110"};
  bool known = false;
  for (auto p : kPresets) known = known || p == name;
  if (!known) throw std::invalid_argument("unknown freeze preset '" + std::string(name) + "'");
  return FreezeConfig{name[1] == '1', name[2] == '1', name[3] == '1', false};
}

std::string FreezeConfig::preset_name() const {
  if (train_encoder) return "custom";
  std::string name = "a";
  name += train_mt_fusion ? '1' : '0';
  name += train_ms_fusion ? '1' : '0';
  name += train_head ? '1' : '0';
  for (auto p : {"a100", "a010", "a001", "a111", "a110"}) {
    if (name == p) return name;
  }
  return "custom";
}

std::vector<Group> FreezeConfig::groups() const {
  std::vector<Group> g;
  if (train_encoder) g.push_back(Group::kEncoder);
  if (train_mt_fusion) g.push_back(Group::kMtFusion);
  if (train_ms_fusion) g.push_back(Group::kMsFusion);
  if (train_head) g.push_back(Group::kHead);
  return g;
}

void FreezeConfig::validate() const {
  if (groups().empty()) throw std::invalid_argument("freeze config must train at least one group");
}

double Schedule::lr_at(int epoch) const {
  return lr * std::pow(lr_decay, epoch / decay_every);
}

void Schedule::validate() const {
  if (!(lr > 0) || !(lr_decay > 0) || decay_every < 1 || epochs < 1 || weight_decay < 0) {
    throw std::invalid_argument("schedule values must be positive");
  }
}

void MlftBatchSpec::validate() const {
  if (n_unlabeled_tgt < 1 || n_labeled_tgt < 1 || n_labeled_src < 1) {
    throw std::invalid_argument("MLFT batch counts must be positive");
  }
}

void LossWeights::validate(bool allow_zero) const {
  const bool ok = allow_zero ? (alpha >= 0 && beta >= 0 && gamma >= 0 && alpha + beta + gamma > 0)
                             : (alpha > 0 && beta > 0 && gamma > 0);
  if (!ok) throw std::invalid_argument("loss weights alpha, beta, gamma must be > 0");
}

void RunConfig::validate() const {
  network.validate();
  source.validate();
  ada.validate();
  mlft.validate();
  freeze.validate();
  mlft_freeze.validate();
  mlft_batch.validate();
  weights.validate(allow_zero_weights);
  if (ada.batch_step1 < 1 || ada.batch_step23_per_domain < 1 || source.batch < 1) {
    throw std::invalid_argument("batch sizes must be positive");
  }
  if (!(cdmatch.confidence >= 0.5 && cdmatch.confidence <= 1.0)) {
    throw std::invalid_argument("confidence threshold must lie in [0.5, 1]");
  }
  if (!(cdmatch.fp_rate >= 0.0 && cdmatch.fp_rate < 1.0)) {
    throw std::invalid_argument("feature perturbation rate must lie in [0, 1)");
  }
  if (selection.k < 1 || selection.min_change_frac < 0 || selection.min_change_frac >= 1) {
    throw std::invalid_argument("invalid selection config");
  }
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json schedule_json(const Schedule& s) {
  return {{"lr", s.lr},
          {"lr_decay", s.lr_decay},
          {"decay_every", s.decay_every},
          {"epochs", s.epochs},
          {"weight_decay", s.weight_decay}};
}

void read_schedule(const json& j, Schedule& s) {
  s.lr = j.value("lr", s.lr);
  s.lr_decay = j.value("lr_decay", s.lr_decay);
  s.decay_every = j.value("decay_every", s.decay_every);
  s.epochs = j.value("epochs", s.epochs);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
}

}  // namespace

std::string RunConfig::hash() const { return hex64(fnv1a64(json(*this).dump())); }

std::string network_hash(const NetworkConfig& cfg) { return hex64(fnv1a64(json(cfg).dump())); }

void to_json(json& j, const FreezeConfig& c) {
  j = json{{"preset", c.preset_name()},
           {"train_mt_fusion", c.train_mt_fusion},
           {"train_ms_fusion", c.train_ms_fusion},
           {"train_head", c.train_head},
           {"train_encoder", c.train_encoder}};
}

void from_json(const json& j, FreezeConfig& c) {
  if (j.is_string()) {
    c = FreezeConfig::preset(j.get<std::string>());
    return;
  }
  if (j.contains("preset") && j["preset"].get<std::string>() != "custom") {
    c = FreezeConfig::preset(j["preset"].get<std::string>());
    c.train_encoder = j.value("train_encoder", false);
    return;
  }
  c.train_mt_fusion = j.value("train_mt_fusion", c.train_mt_fusion);
  c.train_ms_fusion = j.value("train_ms_fusion", c.train_ms_fusion);
  c.train_head = j.value("train_head", c.train_head);
  c.train_encoder = j.value("train_encoder", c.train_encoder);
}

void to_json(json& j, const RunConfig& c) {
  json ada = schedule_json(c.ada);
  ada["batch_step1"] = c.ada.batch_step1;
  ada["batch_step23_per_domain"] = c.ada.batch_step23_per_domain;
  json source = schedule_json(c.source);
  source["batch"] = c.source.batch;
  j = json{{"seed", c.seed},
           {"device", c.device},
           {"network", c.network},
           {"source", source},
           {"freeze", c.freeze},
           {"ada", ada},
           {"mlft_batch",
            {{"n_unlabeled_tgt", c.mlft_batch.n_unlabeled_tgt},
             {"n_labeled_tgt", c.mlft_batch.n_labeled_tgt},
             {"n_labeled_src", c.mlft_batch.n_labeled_src}}},
           {"mlft", schedule_json(c.mlft)},
           {"mlft_freeze", c.mlft_freeze},
           {"weights", {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma}}},
           {"cdmatch", {{"confidence", c.cdmatch.confidence}, {"fp_rate", c.cdmatch.fp_rate}}},
           {"selection", {{"k", c.selection.k}, {"min_change_frac", c.selection.min_change_frac}}},
           {"allow_zero_weights", c.allow_zero_weights}};
}

void from_json(const json& j, RunConfig& c) {
  c.seed = j.value("seed", c.seed);
  c.device = j.value("device", c.device);
  if (j.contains("network")) c.network = j["network"].get<NetworkConfig>();
  if (j.contains("source")) {
    read_schedule(j["source"], c.source);
    c.source.batch = j["source"].value("batch", c.source.batch);
  }
  if (j.contains("freeze")) c.freeze = j["freeze"].get<FreezeConfig>();
  if (j.contains("ada")) {
    read_schedule(j["ada"], c.ada);
    c.ada.batch_step1 = j["ada"].value("batch_step1", c.ada.batch_step1);
    c.ada.batch_step23_per_domain = j["ada"].value("batch_step23_per_domain", c.ada.batch_step23_per_domain);
  }
  if (j.contains("mlft_batch")) {
    const auto& b = j["mlft_batch"];
    c.mlft_batch.n_unlabeled_tgt = b.value("n_unlabeled_tgt", c.mlft_batch.n_unlabeled_tgt);
    c.mlft_batch.n_labeled_tgt = b.value("n_labeled_tgt", c.mlft_batch.n_labeled_tgt);
    c.mlft_batch.n_labeled_src = b.value("n_labeled_src", c.mlft_batch.n_labeled_src);
  }
  if (j.contains("mlft")) read_schedule(j["mlft"], c.mlft);
  if (j.contains("mlft_freeze")) c.mlft_freeze = j["mlft_freeze"].get<FreezeConfig>();
  if (j.contains("weights")) {
    c.weights.alpha = j["weights"].value("alpha", c.weights.alpha);
    c.weights.beta = j["weights"].value("beta", c.weights.beta);
    c.weights.gamma = j["weights"].value("gamma", c.weights.gamma);
  }
  if (j.contains("cdmatch")) {
    c.cdmatch.confidence = j["cdmatch"].value("confidence", c.cdmatch.confidence);
    c.cdmatch.fp_rate = j["cdmatch"].value("fp_rate", c.cdmatch.fp_rate);
  }
  if (j.contains("selection")) {
    c.selection.k = j["selection"].value("k", c.selection.k);
    c.selection.min_change_frac = j["selection"].value("min_change_frac", c.selection.min_change_frac);
  }
  c.allow_zero_weights = j.value("allow_zero_weights", c.allow_zero_weights);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  RunConfig cfg = json::parse(in).get<RunConfig>();
  return cfg;
}

}  // namespace cdadapt
