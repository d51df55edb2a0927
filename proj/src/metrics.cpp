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

#include "cdadapt/metrics.hpp"

#include <stdexcept>

namespace cdadapt {

Confusion confusion(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("confusion: prediction and ground truth extents differ");
  }
  Confusion c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const auto p = pred.data[i];
    const auto g = gt.data[i];
    if (p > 1 || g > 1) throw std::invalid_argument("confusion: masks must be binary");
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double f1_from_pr(double precision, double recall) {
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

MetricReport metrics_from_confusion(const Confusion& c, int n_samples) {
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  MetricReport r;
  r.n_samples = n_samples;
  r.precision = c.tp + c.fp > 0 ? tp / (tp + fp) : (c.fn == 0 ? 1.0 : 0.0);
  r.recall = c.tp + c.fn > 0 ? tp / (tp + fn) : (c.fp == 0 ? 1.0 : 0.0);
  if (c.tp + c.fp + c.fn == 0) {
    r.f1 = 1.0;
    r.iou = 1.0;
  } else {
    r.f1 = f1_from_pr(r.precision, r.recall);
    r.iou = tp / (tp + fp + fn);
  }
  r.oa = c.total() > 0 ? static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total()) : 1.0;
  return r;
}

MetricReport evaluate_masks(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("evaluate_masks: list sizes differ");
  Confusion total;
  for (std::size_t i = 0; i < preds.size(); ++i) total += confusion(preds[i], gts[i]);
  return metrics_from_confusion(total, static_cast<int>(preds.size()));
}

PerSampleAnalysis per_sample_analysis(const std::vector<Mask>& preds, const std::vector<Mask>& gts,
                                      double baseline_f1, const std::vector<Mask>* before) {
  if (preds.size() != gts.size()) throw std::invalid_argument("per_sample_analysis: list sizes differ");
  PerSampleAnalysis out;
  if (preds.empty()) return out;
  const auto n = static_cast<double>(preds.size());
  int above = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out.f1.push_back(metrics_from_confusion(confusion(preds[i], gts[i])).f1);
    if (out.f1.back() > baseline_f1) ++above;
  }
  out.frac_above_baseline = above / n;
  if (before) {
    if (before->size() != preds.size()) {
      throw std::invalid_argument("per_sample_analysis: comparison list size differs");
    }
    ImprovementHistogram hist;
    hist.edges = {-1.0, -0.1, -0.05, 0.0, 0.05, 0.1, 1.0 + 1e-12};
    hist.counts.assign(hist.edges.size() - 1, 0);
    int improved = 0;
    int improved_big = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double prev = metrics_from_confusion(confusion((*before)[i], gts[i])).f1;
      const double delta = out.f1[i] - prev;
      if (delta > 0) ++improved;
      if (delta > 0.05) ++improved_big;
      for (std::size_t b = 0; b + 1 < hist.edges.size(); ++b) {
        if (delta >= hist.edges[b] && delta < hist.edges[b + 1]) {
          ++hist.counts[b];
          break;
        }
      }
    }
    out.frac_improved = improved / n;
    out.frac_improved_over_005 = improved_big / n;
    out.improvement_histogram = std::move(hist);
  }
  return out;
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
          {"oa", r.oa},               {"iou", r.iou},       {"n_samples", r.n_samples}};
}

nlohmann::json to_json(const Confusion& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

Image render_error_overlay(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("overlay: prediction and ground truth extents differ");
  }
  Image img(pred.height, pred.width, 3);
  for (int y = 0; y < pred.height; ++y) {
    for (int x = 0; x < pred.width; ++x) {
      const bool p = pred.at(y, x) != 0;
      const bool g = gt.at(y, x) != 0;
      float r = 0;
      float gr = 0;
      float b = 0;
      if (p && g) {
        r = gr = b = 1.0F;
      } else if (p) {
        r = 1.0F;
      } else if (g) {
        gr = 1.0F;
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = gr;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

}  // namespace cdadapt
