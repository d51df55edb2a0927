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

#ifndef CDADAPT_LOSSES_HPP
#define CDADAPT_LOSSES_HPP

#include <torch/torch.h>

namespace cdadapt {

/// Per-element BCE from logits: max(x,0) - x*y + log(1 + exp(-|x|)).
torch::Tensor bce_with_logits_elementwise(const torch::Tensor& logits, const torch::Tensor& target);

/// Mean BCE over all elements.
torch::Tensor bce_with_logits(const torch::Tensor& logits, const torch::Tensor& target);

/// Mean BCE over elements where weight == 1. Returns 0 (and sets *count to 0)
/// when no element is selected.
torch::Tensor masked_bce_with_logits(const torch::Tensor& logits, const torch::Tensor& target,
                                     const torch::Tensor& select, int64_t* count = nullptr);

/// Soft Dice loss 1 - (2|P.M| + 1) / (|P| + |M| + 1), pooled over the batch.
torch::Tensor dice_loss(const torch::Tensor& prob, const torch::Tensor& mask);

/// Source-domain segmentation loss: BCE + Dice, equal weights.
torch::Tensor hybrid_seg_loss(const torch::Tensor& logits, const torch::Tensor& mask);

/// Mean-cell BCE of a discriminator logit map against one domain label
/// (1 = source, 0 = target).
torch::Tensor domain_bce(const torch::Tensor& logit_map, double label);

inline constexpr double kSourceLabel = 1.0;
inline constexpr double kTargetLabel = 0.0;

}  // namespace cdadapt

#endif  // CDADAPT_LOSSES_HPP
