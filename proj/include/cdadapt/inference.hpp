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

#ifndef CDADAPT_INFERENCE_HPP
#define CDADAPT_INFERENCE_HPP

#include <vector>

#include "cdadapt/metrics.hpp"
#include "cdadapt/network.hpp"

namespace cdadapt {

inline constexpr double kBinarizeThreshold = 0.5;

/// Binarized predictions (prob > 0.5), in dataset order, eval mode.
std::vector<Mask> predict_masks(ChangeDetector& model, const std::vector<ImagePair>& pairs,
                                int batch_size = 16);

struct ModelEvaluation {
  MetricReport report;
  std::vector<Mask> predictions;
};

/// Micro-averaged metrics over every labeled pair.
ModelEvaluation evaluate_model(ChangeDetector& model, const std::vector<ImagePair>& pairs,
                               int batch_size = 16);

}  // namespace cdadapt

#endif  // CDADAPT_INFERENCE_HPP
