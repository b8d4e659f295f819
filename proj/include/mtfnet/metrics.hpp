#pragma once

#include <string>
#include <vector>

#include "mtfnet/common.hpp"

namespace mtfnet {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long support = 0;  // true instances of the class
};

struct MetricsReport {
    std::vector<std::string> labels;
    std::vector<ClassMetrics> per_class;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::vector<long>> confusion;  // [truth][predicted]

    double train_time_s = 0.0;
    double mean_inference_ms = 0.0;
    double p95_inference_ms = 0.0;
};

/// Per-class precision/recall/F1 with the zero-denominator-is-zero
/// convention, macro averages, and the confusion matrix.
MetricsReport compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                              const std::vector<std::string>& labels);

/// Structured JSON document for one report (timings included).
std::string metrics_to_json(const MetricsReport& report, int indent = 2);

}  // namespace mtfnet
