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

#include <cstdio>
#include <stdexcept>
#include <string_view>

#include "cdadapt/config.hpp"

namespace cdadapt {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json meta_to_json(const CheckpointMeta& m) {
  return {{"stage", m.stage},
          {"epochs_done", m.epochs_done},
          {"config_hash", m.config_hash},
          {"network_hash", m.network_hash},
          {"config", m.config},
          {"extra", m.extra}};
}

CheckpointMeta meta_from_json(const json& j) {
  CheckpointMeta m;
  m.stage = j.at("stage").get<std::string>();
  m.epochs_done = j.at("epochs_done").get<int>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.network_hash = j.at("network_hash").get<std::string>();
  m.config = j.value("config", json::object());
  m.extra = j.value("extra", json::object());
  return m;
}

void write_params(torch::serialize::OutputArchive& archive, torch::nn::Module& module,
                  std::string_view prefix) {
  for (const auto& item : module.named_parameters(true)) {
    if (item.key().rfind(prefix, 0) == 0) archive.write(item.key(), item.value().detach());
  }
}

void read_params(torch::serialize::InputArchive& archive, torch::nn::Module& module,
                 std::string_view prefix, std::string_view what) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(true)) {
    if (item.key().rfind(prefix, 0) != 0) continue;
    torch::Tensor loaded;
    if (!archive.try_read(item.key(), loaded)) {
      throw std::runtime_error(std::string(what) + ": checkpoint lacks '" + item.key() + "'");
    }
    if (loaded.sizes() != item.value().sizes()) {
      throw DimensionError(std::string(what) + ": shape mismatch for '" + item.key() + "'");
    }
    item.value().copy_(loaded.to(item.value().dtype()));
  }
}

std::string read_meta_string(torch::serialize::InputArchive& archive) {
  c10::IValue value;
  archive.read("meta", value);
  return value.toStringRef();
}

}  // namespace

void save_checkpoint(const fs::path& path, ChangeDetector& model, Discriminator* disc,
                     const NamedOptimizers& optimizers, const CheckpointMeta& meta) {
  torch::serialize::OutputArchive root;
  root.write("meta", c10::IValue(meta_to_json(meta).dump()));
  for (Group g : kAllGroups) {
    torch::serialize::OutputArchive group;
    write_params(group, *model, std::string(group_name(g)) + ".");
    root.write(std::string("group.") + std::string(group_name(g)), group);
  }
  if (disc) {
    torch::serialize::OutputArchive d;
    write_params(d, **disc, "");
    root.write("discriminator", d);
  }
  for (const auto& [name, opt] : optimizers) {
    torch::serialize::OutputArchive o;
    opt->save(o);
    root.write("optim." + name, o);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  root.save_to(tmp.string());
  fs::rename(tmp, path);
}

CheckpointMeta load_checkpoint(const fs::path& path, ChangeDetector& model, Discriminator* disc,
                               const NamedOptimizers& optimizers) {
  torch::serialize::InputArchive root;
  root.load_from(path.string());
  CheckpointMeta meta = meta_from_json(json::parse(read_meta_string(root)));
  if (meta.network_hash != network_hash(model->config())) {
    throw std::runtime_error("checkpoint " + path.string() +
                             " was written for a different network configuration");
  }
  for (Group g : kAllGroups) {
    torch::serialize::InputArchive group;
    root.read(std::string("group.") + std::string(group_name(g)), group);
    read_params(group, *model, std::string(group_name(g)) + ".", group_name(g));
  }
  if (disc) {
    torch::serialize::InputArchive d;
    if (!root.try_read("discriminator", d)) {
      throw std::runtime_error("checkpoint " + path.string() + " has no discriminator");
    }
    read_params(d, **disc, "", "discriminator");
  }
  for (const auto& [name, opt] : optimizers) {
    torch::serialize::InputArchive o;
    if (!root.try_read("optim." + name, o)) {
      throw std::runtime_error("checkpoint lacks optimizer state '" + name + "'");
    }
    opt->load(o);
  }
  return meta;
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  torch::serialize::InputArchive root;
  root.load_from(path.string());
  return meta_from_json(json::parse(read_meta_string(root)));
}

namespace {

std::string digest_params(const std::vector<std::pair<std::string, torch::Tensor>>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto fold = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    fold(name.data(), name.size());
    auto c = t.detach().contiguous().cpu();
    fold(c.data_ptr(), c.numel() * c.element_size());
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string group_digest(ChangeDetector& model, Group g) {
  const std::string prefix = std::string(group_name(g)) + ".";
  std::vector<std::pair<std::string, torch::Tensor>> params;
  for (const auto& item : model->named_parameters(true)) {
    if (item.key().rfind(prefix, 0) == 0) params.emplace_back(item.key(), item.value());
  }
  return digest_params(params);
}

std::string module_digest(torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> params;
  for (const auto& item : module.named_parameters(true)) params.emplace_back(item.key(), item.value());
  return digest_params(params);
}

}  // namespace cdadapt
