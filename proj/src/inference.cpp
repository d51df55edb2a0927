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

#include "cdadapt/inference.hpp"

#include <algorithm>
#include <span>
#include <stdexcept>

namespace cdadapt {

std::vector<Mask> predict_masks(ChangeDetector& model, const std::vector<ImagePair>& pairs,
                                int batch_size) {
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<Mask> out;
  out.reserve(pairs.size());
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < pairs.size(); start += bs) {
    const std::size_t n = std::min(bs, pairs.size() - start);
    auto batch = make_batch(std::span<const ImagePair>(pairs.data() + start, n));
    auto prob = model->forward(batch.t1, batch.t2).prob;
    auto binary = prob > kBinarizeThreshold;
    for (std::size_t i = 0; i < n; ++i) out.push_back(tensor_to_mask(binary[static_cast<int64_t>(i)][0]));
  }
  model->train();
  return out;
}

ModelEvaluation evaluate_model(ChangeDetector& model, const std::vector<ImagePair>& pairs,
                               int batch_size) {
  ModelEvaluation ev;
  ev.predictions = predict_masks(model, pairs, batch_size);
  std::vector<Mask> gts;
  gts.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!p.mask) throw std::invalid_argument("evaluate_model: pair '" + p.id + "' has no mask");
    gts.push_back(*p.mask);
  }
  ev.report = evaluate_masks(ev.predictions, gts);
  return ev;
}

}  // namespace cdadapt
