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

#include "cdadapt/mt_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cdadapt/image.hpp"

namespace cdadapt {

WindowGrid WindowGrid::for_extent(int height, int width, int window) {
  return for_extent(height, width, window, window);
}

WindowGrid WindowGrid::for_extent(int height, int width, int window_h, int window_w) {
  if (height < 1 || width < 1 || window_h < 1 || window_w < 1) {
    throw DimensionError("window grid needs positive extents");
  }
  const int wh = std::min(window_h, height);
  const int ww = std::min(window_w, width);
  if (height % wh != 0 || width % ww != 0) {
    throw DimensionError("feature map " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not divisible by window " + std::to_string(wh) + "x" +
                         std::to_string(ww));
  }
  return WindowGrid{wh, ww, height / wh, width / ww};
}

torch::Tensor change_feature(const torch::Tensor& x1n, const torch::Tensor& x2n) {
  if (x1n.sizes() != x2n.sizes()) {
    throw DimensionError("change_feature: input shapes differ");
  }
  return (x1n - x2n).abs();
}

torch::Tensor window_partition(const torch::Tensor& tokens, const WindowGrid& g) {
  if (tokens.dim() != 4 || tokens.size(1) != g.height() || tokens.size(2) != g.width()) {
    throw DimensionError("window_partition: token map does not match window grid");
  }
  const auto b = tokens.size(0);
  const auto c = tokens.size(3);
  return tokens.reshape({b, g.hn, g.wh, g.wn, g.ww, c}).permute({0, 1, 3, 2, 4, 5});
}

torch::Tensor window_merge(const torch::Tensor& windows, const WindowGrid& g) {
  const auto b = windows.size(0);
  const auto c = windows.size(5);
  return windows.permute({0, 1, 3, 2, 4, 5}).reshape({b, g.height(), g.width(), c});
}

StpeApplied apply_stpe(const torch::Tensor& q_star, const torch::Tensor& v1,
                       const torch::Tensor& v2, const StpeTables& stpe, const WindowGrid& g) {
  auto check = [&](const torch::Tensor& t) {
    if (t.dim() != 6 || t.size(1) != g.hn || t.size(2) != g.wn || t.size(3) != g.wh ||
        t.size(4) != g.ww) {
      throw DimensionError("apply_stpe: tokens are not windowed to the given grid");
    }
  };
  check(q_star);
  check(v1);
  check(v2);
  const auto c = q_star.size(5);
  if (stpe.window.size(0) != g.wh || stpe.window.size(1) != g.ww || stpe.global.size(0) != g.hn ||
      stpe.global.size(1) != g.wn || stpe.temporal.size(0) != 3 || stpe.window.size(2) != c) {
    throw DimensionError("apply_stpe: embedding tables inconsistent with window grid");
  }
  const auto spatial = stpe.window.view({1, 1, 1, g.wh, g.ww, c}) +
                       stpe.global.view({1, g.hn, g.wn, 1, 1, c});
  return {q_star + stpe.temporal[0] + spatial,
          v1 + stpe.temporal[1] + spatial,
          v2 + stpe.temporal[2] + spatial};
}

MtTransformerImpl::MtTransformerImpl(int channels, int height, int width, int window, int heads)
    : channels_(channels), heads_(heads), grid_(WindowGrid::for_extent(height, width, window)) {
  if (heads < 1 || channels % heads != 0) {
    throw std::invalid_argument("channels must be divisible by the head count");
  }
  pre_norm = register_module("pre_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  linear_q = register_module("linear_q", torch::nn::Linear(channels, channels));
  linear_v = register_module("linear_v", torch::nn::Linear(channels, channels));
  linear_a = register_module("linear_a", torch::nn::Linear(channels, channels));
  post_norm = register_module("post_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));

  // Truncated normal(0, 0.02), cut at two standard deviations.
  auto trunc = [](std::vector<int64_t> shape) {
    return (torch::randn(shape) * 0.02).clamp_(-0.04, 0.04);
  };
  p_window_ = register_parameter("p_window", trunc({grid_.wh, grid_.ww, channels}));
  p_global_ = register_parameter("p_global", trunc({grid_.hn, grid_.wn, channels}));
  p_temporal_ = register_parameter("p_temporal", trunc({3, channels}));
}

torch::Tensor MtTransformerImpl::forward(const torch::Tensor& x1, const torch::Tensor& x2) {
  return run(x1, x2, false).output;
}

MtFuseTrace MtTransformerImpl::forward_traced(const torch::Tensor& x1, const torch::Tensor& x2) {
  return run(x1, x2, true);
}

MtFuseTrace MtTransformerImpl::run(const torch::Tensor& x1, const torch::Tensor& x2,
                                   bool keep_trace) {
  if (x1.sizes() != x2.sizes()) throw DimensionError("mt_fuse: input shapes differ");
  if (x1.dim() != 4 || x1.size(1) != channels_) {
    throw DimensionError("mt_fuse: expected B x " + std::to_string(channels_) + " x H x W input");
  }
  if (x1.size(2) != grid_.height() || x1.size(3) != grid_.width()) {
    throw DimensionError("mt_fuse: input " + std::to_string(x1.size(2)) + "x" +
                         std::to_string(x1.size(3)) + " does not match the configured grid " +
                         std::to_string(grid_.height()) + "x" + std::to_string(grid_.width()));
  }
  const auto b = x1.size(0);
  const auto c = channels_;
  const auto n = static_cast<int64_t>(grid_.wh) * grid_.ww;
  const auto n_windows = b * grid_.hn * grid_.wn;
  const auto d = c / heads_;

  auto x1n = pre_norm(x1.permute({0, 2, 3, 1}));
  auto x2n = pre_norm(x2.permute({0, 2, 3, 1}));
  auto f = change_feature(x1n, x2n);

  auto q_star = window_partition(linear_q(f), grid_);
  auto v1 = window_partition(linear_v(x1n), grid_);
  auto v2 = window_partition(linear_v(x2n), grid_);
  auto [q, k1, k2] = apply_stpe(q_star, v1, v2, stpe(), grid_);

  auto heads = [&](const torch::Tensor& t, int64_t tokens) {
    return t.reshape({n_windows, tokens, heads_, d}).transpose(1, 2);
  };
  auto qh = heads(q, n);
  auto kh = heads(torch::cat({k1.reshape({n_windows, n, c}), k2.reshape({n_windows, n, c})}, 1), 2 * n);
  auto vh = heads(torch::cat({v1.reshape({n_windows, n, c}), v2.reshape({n_windows, n, c})}, 1), 2 * n);

  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(d));
  auto weights = torch::softmax(scores, -1);
  auto attn = torch::matmul(weights, vh).transpose(1, 2).reshape(
      {b, grid_.hn, grid_.wn, grid_.wh, grid_.ww, c});
  attn = window_merge(attn, grid_);

  auto fused = linear_a(post_norm(attn)) + attn;
  MtFuseTrace trace;
  trace.output = fused.permute({0, 3, 1, 2}).contiguous();
  if (keep_trace) {
    trace.change = f;
    trace.attention = weights;
  }
  return trace;
}

}  // namespace cdadapt
