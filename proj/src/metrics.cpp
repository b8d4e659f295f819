#include "mtfnet/metrics.hpp"

#include <nlohmann/json.hpp>

namespace mtfnet {

MetricsReport compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                              const std::vector<std::string>& labels) {
    if (truth.size() != predicted.size()) throw Error("metrics: truth/prediction size mismatch");
    const int c = static_cast<int>(labels.size());
    if (c < 1) throw Error("metrics: empty label set");

    MetricsReport report;
    report.labels = labels;
    report.confusion.assign(static_cast<std::size_t>(c), std::vector<long>(c, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= c || predicted[i] < 0 || predicted[i] >= c)
            throw Error("metrics: class index out of range");
        ++report.confusion[static_cast<std::size_t>(truth[i])]
                          [static_cast<std::size_t>(predicted[i])];
    }

    report.per_class.resize(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        long tp = report.confusion[k][k];
        long fp = 0, fn = 0, support = 0;
        for (int j = 0; j < c; ++j) {
            if (j != k) {
                fp += report.confusion[j][k];
                fn += report.confusion[k][j];
            }
            support += report.confusion[k][j];
        }
        auto& m = report.per_class[static_cast<std::size_t>(k)];
        m.support = support;
        m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        m.f1 = m.precision + m.recall > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        report.macro_precision += m.precision;
        report.macro_recall += m.recall;
        report.macro_f1 += m.f1;
    }
    report.macro_precision /= c;
    report.macro_recall /= c;
    report.macro_f1 /= c;
    return report;
}

std::string metrics_to_json(const MetricsReport& report, int indent) {
    nlohmann::json j;
    j["labels"] = report.labels;
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t k = 0; k < report.per_class.size(); ++k) {
        const auto& m = report.per_class[k];
        per_class[report.labels[k]] = {{"precision", m.precision},
                                       {"recall", m.recall},
                                       {"f1", m.f1},
                                       {"support", m.support}};
    }
    j["per_class"] = per_class;
    j["macro"] = {{"precision", report.macro_precision},
                  {"recall", report.macro_recall},
                  {"f1", report.macro_f1}};
    j["confusion"] = report.confusion;
    j["train_time_s"] = report.train_time_s;
    j["mean_inference_ms"] = report.mean_inference_ms;
    j["p95_inference_ms"] = report.p95_inference_ms;
    return j.dump(indent);
}

}  // namespace mtfnet
