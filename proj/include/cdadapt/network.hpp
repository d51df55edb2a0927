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

// Bi-temporal change-detection network and the matrix-output domain
// discriminator.
//
// The segmentation network is split into four disjoint parameter groups:
//
//   encoder    siamese hierarchical encoder, scales {4, 8, 16, 32}
//   mt_fusion  one MtTransformer per scale
//   ms_fusion  projection + transposed-conv upsampling to scale 4
//   head       CX-Blocks followed by a x4 decoder
//
// g(t1, t2) = mt_fusion(encoder(t1), encoder(t2)), h(.) = head(ms_fusion(.)).

#ifndef CDADAPT_NETWORK_HPP
#define CDADAPT_NETWORK_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cdadapt/image.hpp"
#include "cdadapt/mt_transformer.hpp"

namespace cdadapt {

struct NetworkConfig {
  int input_size = 256;
  std::array<int, 4> widths{32, 64, 128, 256};
  int encoder_depth = 1;  // CX-Blocks per encoder stage
  int fused_channels = 128;
  int head_blocks = 3;
  int window = 8;
  int heads = 1;
  int disc_layers = 4;
  int disc_channels = 64;

  void validate() const;
  /// Small configuration used for CPU-scale experiments (64 px tiles).
  static NetworkConfig desk();
  /// Tiny configuration for finite-difference gradient checks (32 px).
  static NetworkConfig toy();

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

enum class Group { kEncoder, kMtFusion, kMsFusion, kHead };
inline constexpr std::array<Group, 4> kAllGroups{Group::kEncoder, Group::kMtFusion,
                                                 Group::kMsFusion, Group::kHead};
std::string_view group_name(Group g);

/// Channel-wise layer normalization applied at every spatial position of an
/// N x C x H x W tensor.
class LayerNorm2dImpl : public torch::nn::Module {
 public:
  explicit LayerNorm2dImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(LayerNorm2d);

/// ConvNeXt block: depthwise 7x7, norm, pointwise x4 expansion, GELU,
/// pointwise projection, residual.
class CxBlockImpl : public torch::nn::Module {
 public:
  explicit CxBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d dwconv_{nullptr};
  LayerNorm2d norm_{nullptr};
  torch::nn::Conv2d expand_{nullptr};
  torch::nn::Conv2d project_{nullptr};
};
TORCH_MODULE(CxBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const NetworkConfig& cfg);
  /// One map per stage at scales 4, 8, 16, 32.
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

 private:
  torch::nn::ModuleList stages_;
};
TORCH_MODULE(Encoder);

class MultiScaleFusionImpl : public torch::nn::Module {
 public:
  explicit MultiScaleFusionImpl(const NetworkConfig& cfg);
  /// Four maps at scales {4, 8, 16, 32} -> one map at scale 4.
  torch::Tensor forward(const std::vector<torch::Tensor>& per_scale);

 private:
  std::array<int, 4> widths_;
  torch::nn::ModuleList lift_;
  torch::nn::Conv2d mix_{nullptr};
  LayerNorm2d norm_{nullptr};
};
TORCH_MODULE(MultiScaleFusion);

/// Head output before the sigmoid; d_input is the activation after the last
/// CX-Block and before the decoder.
struct ChangePrediction {
  torch::Tensor logits;   // B x 1 x H x W
  torch::Tensor prob;     // sigmoid(logits)
  torch::Tensor d_input;  // B x C_f x H/4 x W/4
};

class PredictionHeadImpl : public torch::nn::Module {
 public:
  explicit PredictionHeadImpl(const NetworkConfig& cfg);
  ChangePrediction forward(const torch::Tensor& fused);

 private:
  torch::nn::Sequential blocks_;
  torch::nn::ConvTranspose2d up1_{nullptr};
  torch::nn::ConvTranspose2d up2_{nullptr};
};
TORCH_MODULE(PredictionHead);

/// Fully convolutional domain classifier emitting a logit map.
/// Convention: logit > 0 means "source".
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const NetworkConfig& cfg);
  torch::Tensor forward(const torch::Tensor& d_input);
  /// Spatial extent of the logit map for a d_input of the given extent.
  [[nodiscard]] int output_extent(int input_extent) const;

 private:
  int layers_;
  torch::nn::Sequential body_;
};
TORCH_MODULE(Discriminator);

/// Bi-temporal input tensors assembled from ImagePairs.
struct PairBatch {
  torch::Tensor t1;    // B x 3 x H x W
  torch::Tensor t2;
  torch::Tensor mask;  // B x 1 x H x W in {0,1}; undefined if any mask is absent
  std::vector<std::string> ids;
};

torch::Tensor image_to_tensor(const Image& img);  // 3 x H x W float
torch::Tensor mask_to_tensor(const Mask& mask);   // 1 x H x W float
Mask tensor_to_mask(const torch::Tensor& binary_hw);
PairBatch make_batch(std::span<const ImagePair> pairs);
PairBatch make_batch(std::span<const ImagePair* const> pairs);

class ChangeDetectorImpl : public torch::nn::Module {
 public:
  explicit ChangeDetectorImpl(const NetworkConfig& cfg);

  /// Shared weights applied to each frame independently.
  std::pair<std::vector<torch::Tensor>, std::vector<torch::Tensor>> encode(
      const torch::Tensor& t1, const torch::Tensor& t2);
  /// Per-scale temporal fusion, i.e. g() without the encoder.
  std::vector<torch::Tensor> temporal_fuse(const std::vector<torch::Tensor>& f1,
                                           const std::vector<torch::Tensor>& f2);
  /// g(t1, t2)
  std::vector<torch::Tensor> extract(const torch::Tensor& t1, const torch::Tensor& t2);
  /// h(.) = head(ms_fusion(.))
  ChangePrediction decode(const std::vector<torch::Tensor>& fused_per_scale);
  ChangePrediction forward(const torch::Tensor& t1, const torch::Tensor& t2);

  std::vector<torch::Tensor> group_parameters(Group g);
  /// Fully-qualified parameter names of a group.
  std::vector<std::string> group_parameter_names(Group g);
  [[nodiscard]] const NetworkConfig& config() const { return cfg_; }

  /// Loads encoder weights from a torch archive written by save_encoder_weights.
  void load_encoder_weights(const std::filesystem::path& path);
  void save_encoder_weights(const std::filesystem::path& path);

  Encoder encoder{nullptr};
  torch::nn::ModuleList mt_fusion{nullptr};
  MultiScaleFusion ms_fusion{nullptr};
  PredictionHead head{nullptr};

 private:
  void check_input(const torch::Tensor& t) const;
  NetworkConfig cfg_;
};
TORCH_MODULE(ChangeDetector);

/// Channel dropout on each fused map; survivors rescaled by 1 / (1 - rate).
std::vector<torch::Tensor> feature_perturb(const std::vector<torch::Tensor>& fused, double rate);

}  // namespace cdadapt

#endif  // CDADAPT_NETWORK_HPP
