#include "dseg/metrics.hpp"

#include <cstdio>

#include "dseg/common.hpp"

namespace dseg {

ConfusionCounts confusion(const std::vector<uint8_t>& truth, const std::vector<uint8_t>& pred) {
  require(truth.size() == pred.size(), "confusion: mask sizes differ (" +
                                           std::to_string(truth.size()) + " vs " +
                                           std::to_string(pred.size()) + ")");
  ConfusionCounts c;
  for (size_t i = 0; i < truth.size(); ++i) {
    const uint8_t t = truth[i], p = pred[i];
    require(t <= 1 && p <= 1, "confusion: non-binary mask value at pixel " + std::to_string(i));
    if (t && p) ++c.tp;
    else if (!t && p) ++c.fp;
    else if (t && !p) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double iou(const ConfusionCounts& c) {
  const int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

double dsc(const ConfusionCounts& c) {
  const int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

double pairwise_mean(const std::vector<double>& values) {
  require(!values.empty(), "mean of empty list");
  // Recursion-free pairwise sum.
  std::vector<double> acc(values);
  size_t n = acc.size();
  while (n > 1) {
    const size_t half = n / 2;
    for (size_t i = 0; i < half; ++i) acc[i] = acc[2 * i] + acc[2 * i + 1];
    if (n % 2) acc[half] = acc[n - 1];
    n = half + (n % 2);
  }
  return acc[0] / static_cast<double>(values.size());
}

MeanMetrics mean_metrics(const std::vector<ConfusionCounts>& per_sample) {
  require(!per_sample.empty(), "mean_metrics over an empty sample list");
  std::vector<double> ious, dscs;
  ious.reserve(per_sample.size());
  dscs.reserve(per_sample.size());
  for (const auto& c : per_sample) {
    ious.push_back(iou(c));
    dscs.push_back(dsc(c));
  }
  MeanMetrics m;
  m.miou = pairwise_mean(ious);
  m.mdsc = pairwise_mean(dscs);
  m.samples = static_cast<int64_t>(per_sample.size());
  return m;
}

const char* kMetricsTableHeader = "model\tmIoU\tmDSC\tlatency_ms\tpatch_resolution";

std::string format_metrics_table(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsTableHeader;
  out += '\n';
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.4f\t%.2f\t%s\n", r.model.c_str(), r.miou, r.mdsc,
                  r.latency_ms, r.patch_resolution.c_str());
    out += buf;
  }
  return out;
}

}  // namespace dseg
