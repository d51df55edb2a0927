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

#include "cdadapt/losses.hpp"

#include "cdadapt/image.hpp"

namespace cdadapt {

torch::Tensor bce_with_logits_elementwise(const torch::Tensor& logits, const torch::Tensor& target) {
  if (logits.sizes() != target.sizes()) throw DimensionError("BCE: logits and target shapes differ");
  return logits.clamp_min(0) - logits * target + torch::log1p(torch::exp(-logits.abs()));
}

torch::Tensor bce_with_logits(const torch::Tensor& logits, const torch::Tensor& target) {
  return bce_with_logits_elementwise(logits, target).mean();
}

torch::Tensor masked_bce_with_logits(const torch::Tensor& logits, const torch::Tensor& target,
                                     const torch::Tensor& select, int64_t* count) {
  const auto sel = select.to(logits.dtype());
  const int64_t n = static_cast<int64_t>(sel.sum().item<double>());
  if (count) *count = n;
  if (n == 0) return (logits * 0).sum();
  return (bce_with_logits_elementwise(logits, target) * sel).sum() / static_cast<double>(n);
}

torch::Tensor dice_loss(const torch::Tensor& prob, const torch::Tensor& mask) {
  const auto inter = (prob * mask).sum();
  return 1.0 - (2.0 * inter + 1.0) / (prob.sum() + mask.sum() + 1.0);
}

torch::Tensor hybrid_seg_loss(const torch::Tensor& logits, const torch::Tensor& mask) {
  return bce_with_logits(logits, mask) + dice_loss(torch::sigmoid(logits), mask);
}

torch::Tensor domain_bce(const torch::Tensor& logit_map, double label) {
  return bce_with_logits(logit_map, torch::full_like(logit_map, label));
}

}  // namespace cdadapt
