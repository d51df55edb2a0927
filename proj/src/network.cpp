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

#include "cdadapt/network.hpp"

#include <algorithm>
#include <stdexcept>

namespace cdadapt {
namespace nn = torch::nn;

// ---------------------------------------------------------------------------
// Config

void NetworkConfig::validate() const {
  if (input_size < 32 || input_size % 32 != 0) {
    throw DimensionError("input_size must be a positive multiple of 32");
  }
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("encoder widths must be positive");
    if (w % heads != 0) throw std::invalid_argument("encoder widths must be divisible by heads");
  }
  if (fused_channels < 2 || fused_channels % 2 != 0) {
    throw std::invalid_argument("fused_channels must be even and >= 2");
  }
  if (head_blocks < 1 || encoder_depth < 0 || window < 1 || heads < 1 || disc_layers < 1 ||
      disc_channels < 1) {
    throw std::invalid_argument("invalid network configuration");
  }
}

NetworkConfig NetworkConfig::desk() {
  NetworkConfig c;
  c.input_size = 64;
  c.widths = {16, 32, 48, 64};
  c.encoder_depth = 1;
  c.fused_channels = 32;
  c.head_blocks = 3;
  c.window = 4;
  c.disc_layers = 2;
  c.disc_channels = 32;
  return c;
}

NetworkConfig NetworkConfig::toy() {
  NetworkConfig c;
  c.input_size = 32;
  c.widths = {4, 6, 8, 8};
  c.encoder_depth = 1;
  c.fused_channels = 8;
  c.head_blocks = 3;
  c.window = 2;
  c.disc_layers = 2;
  c.disc_channels = 4;
  return c;
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size},       {"widths", c.widths},
                     {"encoder_depth", c.encoder_depth}, {"fused_channels", c.fused_channels},
                     {"head_blocks", c.head_blocks},     {"window", c.window},
                     {"heads", c.heads},                 {"disc_layers", c.disc_layers},
                     {"disc_channels", c.disc_channels}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.input_size = j.value("input_size", d.input_size);
  c.widths = j.value("widths", d.widths);
  c.encoder_depth = j.value("encoder_depth", d.encoder_depth);
  c.fused_channels = j.value("fused_channels", d.fused_channels);
  c.head_blocks = j.value("head_blocks", d.head_blocks);
  c.window = j.value("window", d.window);
  c.heads = j.value("heads", d.heads);
  c.disc_layers = j.value("disc_layers", d.disc_layers);
  c.disc_channels = j.value("disc_channels", d.disc_channels);
}

std::string_view group_name(Group g) {
  switch (g) {
    case Group::kEncoder: return "encoder";
    case Group::kMtFusion: return "mt_fusion";
    case Group::kMsFusion: return "ms_fusion";
    case Group::kHead: return "head";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Building blocks

LayerNorm2dImpl::LayerNorm2dImpl(int channels) {
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({channels})));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
  return norm_(x.permute({0, 2, 3, 1})).permute({0, 3, 1, 2});
}

CxBlockImpl::CxBlockImpl(int channels) {
  dwconv_ = register_module(
      "dwconv", nn::Conv2d(nn::Conv2dOptions(channels, channels, 7).padding(3).groups(channels)));
  norm_ = register_module("norm", LayerNorm2d(channels));
  expand_ = register_module("expand", nn::Conv2d(nn::Conv2dOptions(channels, 4 * channels, 1)));
  project_ = register_module("project", nn::Conv2d(nn::Conv2dOptions(4 * channels, channels, 1)));
}

torch::Tensor CxBlockImpl::forward(const torch::Tensor& x) {
  auto y = norm_(dwconv_(x));
  y = project_(torch::gelu(expand_(y)));
  return x + y;
}

EncoderImpl::EncoderImpl(const NetworkConfig& cfg) {
  stages_ = register_module("stages", nn::ModuleList());
  for (int i = 0; i < 4; ++i) {
    nn::Sequential stage;
    if (i == 0) {
      stage->push_back(nn::Conv2d(nn::Conv2dOptions(3, cfg.widths[0], 4).stride(4)));
      stage->push_back(LayerNorm2d(cfg.widths[0]));
    } else {
      stage->push_back(LayerNorm2d(cfg.widths[i - 1]));
      stage->push_back(nn::Conv2d(nn::Conv2dOptions(cfg.widths[i - 1], cfg.widths[i], 2).stride(2)));
    }
    for (int b = 0; b < cfg.encoder_depth; ++b) stage->push_back(CxBlock(cfg.widths[i]));
    stages_->push_back(stage);
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  out.reserve(4);
  auto h = x;
  for (const auto& stage : *stages_) {
    h = stage->as<nn::Sequential>()->forward(h);
    out.push_back(h);
  }
  return out;
}

MultiScaleFusionImpl::MultiScaleFusionImpl(const NetworkConfig& cfg) : widths_(cfg.widths) {
  const int cf = cfg.fused_channels;
  lift_ = register_module("lift", nn::ModuleList());
  // lift[i] projects scale i to cf channels; lift[4 + k] are the transposed
  // convolutions that carry the running sum one octave up.
  for (int i = 0; i < 4; ++i) {
    lift_->push_back(nn::Conv2d(nn::Conv2dOptions(cfg.widths[i], cf, 1)));
  }
  for (int k = 0; k < 3; ++k) {
    lift_->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(cf, cf, 2).stride(2)));
  }
  mix_ = register_module("mix", nn::Conv2d(nn::Conv2dOptions(cf, cf, 3).padding(1)));
  norm_ = register_module("norm", LayerNorm2d(cf));
}

torch::Tensor MultiScaleFusionImpl::forward(const std::vector<torch::Tensor>& per_scale) {
  if (per_scale.size() != 4) {
    throw DimensionError("fuse_scales expects maps at scales {4, 8, 16, 32}, got " +
                         std::to_string(per_scale.size()));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (!per_scale[i].defined() || per_scale[i].dim() != 4 || per_scale[i].size(1) != widths_[i]) {
      throw DimensionError("fuse_scales: missing or malformed map at scale " +
                           std::to_string(4 << i));
    }
    if (i > 0 && (per_scale[i].size(2) * 2 != per_scale[i - 1].size(2) ||
                  per_scale[i].size(3) * 2 != per_scale[i - 1].size(3))) {
      throw DimensionError("fuse_scales: scale " + std::to_string(4 << i) +
                           " is not half the extent of the previous scale");
    }
  }
  auto proj = [&](std::size_t i) { return lift_[i]->as<nn::Conv2d>()->forward(per_scale[i]); };
  auto up = [&](std::size_t k, const torch::Tensor& x) {
    return lift_[4 + k]->as<nn::ConvTranspose2d>()->forward(x);
  };
  auto y = proj(3);
  y = up(0, y) + proj(2);
  y = up(1, y) + proj(1);
  y = up(2, y) + proj(0);
  return torch::gelu(norm_(mix_(y)));
}

PredictionHeadImpl::PredictionHeadImpl(const NetworkConfig& cfg) {
  const int cf = cfg.fused_channels;
  blocks_ = register_module("blocks", nn::Sequential());
  for (int i = 0; i < cfg.head_blocks; ++i) blocks_->push_back(CxBlock(cf));
  up1_ = register_module("up1", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(cf, cf / 2, 2).stride(2)));
  up2_ = register_module("up2", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(cf / 2, 1, 2).stride(2)));
}

ChangePrediction PredictionHeadImpl::forward(const torch::Tensor& fused) {
  ChangePrediction out;
  out.d_input = blocks_->forward(fused);
  out.logits = up2_(torch::gelu(up1_(out.d_input)));
  out.prob = torch::sigmoid(out.logits);
  return out;
}

DiscriminatorImpl::DiscriminatorImpl(const NetworkConfig& cfg) : layers_(cfg.disc_layers) {
  body_ = register_module("body", nn::Sequential());
  int in = cfg.fused_channels;
  for (int i = 0; i < layers_; ++i) {
    const int out = cfg.disc_channels * (1 << std::min(i, 3));
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
  }
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, 1, 3).padding(1)));
}

int DiscriminatorImpl::output_extent(int input_extent) const { return input_extent >> layers_; }

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& d_input) {
  if (d_input.dim() != 4) throw DimensionError("discriminator expects B x C x h x w input");
  const int need = 1 << layers_;
  if (d_input.size(2) < need || d_input.size(3) < need) {
    throw DimensionError("discriminator input " + std::to_string(d_input.size(2)) + "x" +
                         std::to_string(d_input.size(3)) + " is smaller than its receptive grid " +
                         std::to_string(need));
  }
  return body_->forward(d_input);
}

// ---------------------------------------------------------------------------
// Tensor conversion

torch::Tensor image_to_tensor(const Image& img) {
  auto hwc = torch::from_blob(const_cast<float*>(img.data.data()),
                              {img.height, img.width, img.channels}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor mask_to_tensor(const Mask& mask) {
  auto hw = torch::from_blob(const_cast<std::uint8_t*>(mask.data.data()), {1, mask.height, mask.width},
                             torch::kUInt8);
  return hw.to(torch::kFloat32);
}

Mask tensor_to_mask(const torch::Tensor& binary_hw) {
  auto t = binary_hw.squeeze().to(torch::kUInt8).contiguous();
  if (t.dim() != 2) throw DimensionError("tensor_to_mask expects an H x W tensor");
  Mask m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
  std::copy(t.data_ptr<std::uint8_t>(), t.data_ptr<std::uint8_t>() + t.numel(), m.data.begin());
  return m;
}

PairBatch make_batch(std::span<const ImagePair* const> pairs) {
  if (pairs.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<torch::Tensor> t1;
  std::vector<torch::Tensor> t2;
  std::vector<torch::Tensor> masks;
  PairBatch batch;
  bool all_masked = true;
  for (const ImagePair* p : pairs) {
    t1.push_back(image_to_tensor(p->t1));
    t2.push_back(image_to_tensor(p->t2));
    batch.ids.push_back(p->id);
    if (p->mask) {
      masks.push_back(mask_to_tensor(*p->mask));
    } else {
      all_masked = false;
    }
  }
  batch.t1 = torch::stack(t1);
  batch.t2 = torch::stack(t2);
  if (all_masked) batch.mask = torch::stack(masks);
  return batch;
}

PairBatch make_batch(std::span<const ImagePair> pairs) {
  std::vector<const ImagePair*> ptrs;
  ptrs.reserve(pairs.size());
  for (const auto& p : pairs) ptrs.push_back(&p);
  return make_batch(std::span<const ImagePair* const>(ptrs));
}

// ---------------------------------------------------------------------------
// Change detector

ChangeDetectorImpl::ChangeDetectorImpl(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder = register_module("encoder", Encoder(cfg_));
  mt_fusion = register_module("mt_fusion", nn::ModuleList());
  for (int i = 0; i < 4; ++i) {
    const int extent = cfg_.input_size / (4 << i);
    mt_fusion->push_back(MtTransformer(cfg_.widths[i], extent, extent, cfg_.window, cfg_.heads));
  }
  ms_fusion = register_module("ms_fusion", MultiScaleFusion(cfg_));
  head = register_module("head", PredictionHead(cfg_));
}

void ChangeDetectorImpl::check_input(const torch::Tensor& t) const {
  if (t.dim() != 4 || t.size(1) != 3) throw DimensionError("expected B x 3 x H x W input");
  if (t.size(2) % 32 != 0 || t.size(3) % 32 != 0) {
    throw DimensionError("input " + std::to_string(t.size(2)) + "x" + std::to_string(t.size(3)) +
                         " is not divisible by 32; pad or re-tile the images");
  }
  if (t.size(2) != cfg_.input_size || t.size(3) != cfg_.input_size) {
    throw DimensionError("input " + std::to_string(t.size(2)) + "x" + std::to_string(t.size(3)) +
                         " differs from the configured tile size " +
                         std::to_string(cfg_.input_size) + "; re-tile the images");
  }
}

std::pair<std::vector<torch::Tensor>, std::vector<torch::Tensor>> ChangeDetectorImpl::encode(
    const torch::Tensor& t1, const torch::Tensor& t2) {
  check_input(t1);
  check_input(t2);
  if (t1.sizes() != t2.sizes()) throw DimensionError("t1 and t2 batches differ in shape");
  return {encoder->forward(t1), encoder->forward(t2)};
}

std::vector<torch::Tensor> ChangeDetectorImpl::temporal_fuse(const std::vector<torch::Tensor>& f1,
                                                             const std::vector<torch::Tensor>& f2) {
  if (f1.size() != 4 || f2.size() != 4) throw DimensionError("expected four encoder scales");
  std::vector<torch::Tensor> out;
  out.reserve(4);
  for (std::size_t i = 0; i < 4; ++i) {
    out.push_back(mt_fusion[i]->as<MtTransformerImpl>()->forward(f1[i], f2[i]));
  }
  return out;
}

std::vector<torch::Tensor> ChangeDetectorImpl::extract(const torch::Tensor& t1,
                                                       const torch::Tensor& t2) {
  auto [f1, f2] = encode(t1, t2);
  return temporal_fuse(f1, f2);
}

ChangePrediction ChangeDetectorImpl::decode(const std::vector<torch::Tensor>& fused_per_scale) {
  return head->forward(ms_fusion->forward(fused_per_scale));
}

ChangePrediction ChangeDetectorImpl::forward(const torch::Tensor& t1, const torch::Tensor& t2) {
  return decode(extract(t1, t2));
}

std::vector<std::string> ChangeDetectorImpl::group_parameter_names(Group g) {
  const std::string prefix = std::string(group_name(g)) + ".";
  std::vector<std::string> names;
  for (const auto& item : named_parameters(true)) {
    if (item.key().rfind(prefix, 0) == 0) names.push_back(item.key());
  }
  return names;
}

std::vector<torch::Tensor> ChangeDetectorImpl::group_parameters(Group g) {
  const std::string prefix = std::string(group_name(g)) + ".";
  std::vector<torch::Tensor> params;
  for (const auto& item : named_parameters(true)) {
    if (item.key().rfind(prefix, 0) == 0) params.push_back(item.value());
  }
  return params;
}

void ChangeDetectorImpl::save_encoder_weights(const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& item : encoder->named_parameters(true)) archive.write(item.key(), item.value());
  archive.save_to(path.string());
}

void ChangeDetectorImpl::load_encoder_weights(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::NoGradGuard no_grad;
  for (auto& item : encoder->named_parameters(true)) {
    torch::Tensor loaded;
    if (!archive.try_read(item.key(), loaded)) {
      throw std::runtime_error("encoder weights missing '" + item.key() + "'");
    }
    if (loaded.sizes() != item.value().sizes()) {
      throw DimensionError("encoder weight '" + item.key() + "' has the wrong shape");
    }
    item.value().copy_(loaded);
  }
}

std::vector<torch::Tensor> feature_perturb(const std::vector<torch::Tensor>& fused, double rate) {
  std::vector<torch::Tensor> out;
  out.reserve(fused.size());
  for (const auto& f : fused) out.push_back(torch::feature_dropout(f, rate, true));
  return out;
}

}  // namespace cdadapt
