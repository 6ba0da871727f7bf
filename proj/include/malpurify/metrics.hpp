#pragma once

#include <span>
#include <string>
#include <vector>

#include "malpurify/errors.hpp"
#include "malpurify/features.hpp"

namespace malpurify {

struct Confusion {
  Index tp = 0, fp = 0, tn = 0, fn = 0;
  Index total() const { return tp + fp + tn + fn; }
};

// Positive class is malicious. Rates with an empty denominator are 0.
struct MetricSet {
  double fpr = 0;
  double fnr = 0;
  double accuracy = 0;
  double balanced_accuracy = 0;
  double f1 = 0;
  double runtime_s = 0;
  Confusion confusion;
};

inline Confusion confusion(std::span<const Label> predictions, std::span<const Label> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("metrics: length mismatch");
  if (predictions.empty()) throw ConfigError("metrics: empty input");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] == Label::malicious;
    const bool y = labels[i] == Label::malicious;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline MetricSet compute_metrics(std::span<const Label> predictions, std::span<const Label> labels) {
  const Confusion c = confusion(predictions, labels);
  auto ratio = [](Index a, Index b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  MetricSet m;
  m.confusion = c;
  m.fpr = ratio(c.fp, c.fp + c.tn);
  m.fnr = ratio(c.fn, c.fn + c.tp);
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.balanced_accuracy = ((1.0 - m.fpr) + (1.0 - m.fnr)) / 2.0;
  const double precision = ratio(c.tp, c.tp + c.fp);
  const double recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
  return m;
}

}  // namespace malpurify
