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

// Pixel-level change-detection metrics. The positive class is "change".
//
// Dataset metrics are micro-averaged: one confusion accumulated over every
// pixel of every sample. Per-sample F1 is a separate path.
//
// Degenerate cases: precision is 1 when nothing is predicted and nothing is
// missed (tp + fp = 0 and fn = 0), else 0; recall likewise with fp. When
// neither prediction nor ground truth has positives, F1 = IoU = 1.

#ifndef CDADAPT_METRICS_HPP
#define CDADAPT_METRICS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdadapt/image.hpp"

namespace cdadapt {

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  [[nodiscard]] std::uint64_t total() const { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct MetricReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double oa = 0;
  double iou = 0;
  int n_samples = 0;
};

/// Throws DimensionError on shape mismatch and std::invalid_argument on
/// non-binary values.
Confusion confusion(const Mask& pred, const Mask& gt);

MetricReport metrics_from_confusion(const Confusion& c, int n_samples = 1);

/// 2PR / (P + R), 0 when P + R = 0.
double f1_from_pr(double precision, double recall);

/// Micro-averaged report over aligned prediction / ground-truth lists.
MetricReport evaluate_masks(const std::vector<Mask>& preds, const std::vector<Mask>& gts);

/// Histogram of per-sample F1 differences (after - before).
struct ImprovementHistogram {
  std::vector<double> edges;       // bin i is [edges[i], edges[i+1])
  std::vector<int> counts;
};

struct PerSampleAnalysis {
  std::vector<double> f1;                  // per sample, same conventions as above
  double frac_above_baseline = 0;          // strict: f1 > baseline
  std::optional<double> frac_improved;     // vs. `before`, strict improvement
  std::optional<double> frac_improved_over_005;  // improvements exceeding 0.05
  std::optional<ImprovementHistogram> improvement_histogram;
};

/// `before`, when given, holds another model's predictions on the same samples.
PerSampleAnalysis per_sample_analysis(const std::vector<Mask>& preds, const std::vector<Mask>& gts,
                                      double baseline_f1,
                                      const std::vector<Mask>* before = nullptr);

nlohmann::json to_json(const MetricReport& r);
nlohmann::json to_json(const Confusion& c);

/// Red = false positive, green = false negative, white = true positive.
Image render_error_overlay(const Mask& pred, const Mask& gt);

}  // namespace cdadapt

#endif  // CDADAPT_METRICS_HPP
