#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dseg {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t fn = 0;
  int64_t tn = 0;

  int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

// Exact per-pixel tallies over two equally sized {0,1} masks.
ConfusionCounts confusion(const std::vector<uint8_t>& truth, const std::vector<uint8_t>& pred);

// tp/(tp+fp+fn); both-empty counts as a perfect prediction (1).
double iou(const ConfusionCounts& c);

// 2tp/(2tp+fp+fn); both-empty -> 1.
double dsc(const ConfusionCounts& c);

// Per-sample IoU/DSC, then the arithmetic mean over samples (pairwise
// summation, so the reduction is order-stable).
struct MeanMetrics {
  double miou = 0.0;
  double mdsc = 0.0;
  int64_t samples = 0;
};

MeanMetrics mean_metrics(const std::vector<ConfusionCounts>& per_sample);

double pairwise_mean(const std::vector<double>& values);

// One row of the evaluation table (Table-1 style layout).
struct MetricsRow {
  std::string model;
  double miou = 0.0;
  double mdsc = 0.0;
  double latency_ms = 0.0;
  std::string patch_resolution = "128x128";
};

extern const char* kMetricsTableHeader;  // "model\tmIoU\tmDSC\tlatency_ms\tpatch_resolution"

std::string format_metrics_table(const std::vector<MetricsRow>& rows);

}  // namespace dseg
