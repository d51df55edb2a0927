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

// Multi-temporal transformer fusion.
//
// Two same-scale feature maps x1, x2 (B x C x H x W) are fused as follows:
//
//   x1', x2' = Norm(x1), Norm(x2)
//   f        = |x1' - x2'|
//   Q* = Linear_Q(f),  V1 = Linear_V(x1'),  V2 = Linear_V(x2')
//   Q  = Q* + P_t[f] + P_window + P_global
//   K1 = V1 + P_t[1] + P_window + P_global,  K2 likewise with P_t[2]
//   A  = softmax(Q [K1;K2]^T / sqrt(d)) [V1;V2]     (per window)
//   F  = Linear_A(Norm(A)) + A
//
// Keys and values are concatenated along the token axis of each window, so a
// query attends over 2 * wh * ww tokens of width c.

#ifndef CDADAPT_MT_TRANSFORMER_HPP
#define CDADAPT_MT_TRANSFORMER_HPP

#include <torch/torch.h>

namespace cdadapt {

/// h = hn * wh, w = wn * ww.
struct WindowGrid {
  int wh = 1;
  int ww = 1;
  int hn = 1;
  int wn = 1;

  /// Window edge is min(window, extent); throws DimensionError when the
  /// resulting window does not tile the extent exactly.
  static WindowGrid for_extent(int height, int width, int window);
  static WindowGrid for_extent(int height, int width, int window_h, int window_w);

  [[nodiscard]] int height() const { return hn * wh; }
  [[nodiscard]] int width() const { return wn * ww; }
  friend bool operator==(const WindowGrid&, const WindowGrid&) = default;
};

/// Elementwise |x1n - x2n|; shapes must match.
torch::Tensor change_feature(const torch::Tensor& x1n, const torch::Tensor& x2n);

/// B x H x W x C  ->  B x hn x wn x wh x ww x C
torch::Tensor window_partition(const torch::Tensor& tokens, const WindowGrid& grid);
/// Inverse of window_partition.
torch::Tensor window_merge(const torch::Tensor& windows, const WindowGrid& grid);

/// Learnable spatio-temporal position embedding tables.
struct StpeTables {
  torch::Tensor window;    // wh x ww x c
  torch::Tensor global;    // hn x wn x c
  torch::Tensor temporal;  // 3 x c, rows {f, 1, 2}
};

struct StpeApplied {
  torch::Tensor q;
  torch::Tensor k1;
  torch::Tensor k2;
};

/// Inputs are windowed (B x hn x wn x wh x ww x c).
StpeApplied apply_stpe(const torch::Tensor& q_star, const torch::Tensor& v1,
                       const torch::Tensor& v2, const StpeTables& stpe, const WindowGrid& grid);

/// Intermediates exposed for inspection and tests.
struct MtFuseTrace {
  torch::Tensor output;     // B x C x H x W
  torch::Tensor change;     // f, B x H x W x C
  torch::Tensor attention;  // (B*hn*wn) x heads x N x 2N
};

class MtTransformerImpl : public torch::nn::Module {
 public:
  /// `height`/`width` fix the window grid (and hence the P_global table).
  MtTransformerImpl(int channels, int height, int width, int window, int heads = 1);

  torch::Tensor forward(const torch::Tensor& x1, const torch::Tensor& x2);
  MtFuseTrace forward_traced(const torch::Tensor& x1, const torch::Tensor& x2);

  [[nodiscard]] StpeTables stpe() const { return {p_window_, p_global_, p_temporal_}; }
  [[nodiscard]] const WindowGrid& grid() const { return grid_; }
  [[nodiscard]] int channels() const { return channels_; }

  torch::nn::LayerNorm pre_norm{nullptr};
  torch::nn::Linear linear_q{nullptr};
  torch::nn::Linear linear_v{nullptr};
  torch::nn::Linear linear_a{nullptr};
  torch::nn::LayerNorm post_norm{nullptr};

 private:
  MtFuseTrace run(const torch::Tensor& x1, const torch::Tensor& x2, bool keep_trace);

  int channels_;
  int heads_;
  WindowGrid grid_;
  torch::Tensor p_window_;
  torch::Tensor p_global_;
  torch::Tensor p_temporal_;
};
TORCH_MODULE(MtTransformer);

}  // namespace cdadapt

#endif  // CDADAPT_MT_TRANSFORMER_HPP
