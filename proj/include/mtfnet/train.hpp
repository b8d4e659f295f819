#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mtfnet/checkpoint.hpp"
#include "mtfnet/ingest.hpp"
#include "mtfnet/metrics.hpp"
#include "mtfnet/model.hpp"

namespace mtfnet {

struct EmptyDataset : Error {
    EmptyDataset() : Error("dataset has no training slots") {}
};
struct DivergedLoss : Error {
    DivergedLoss(int epoch, int batch)
        : Error("loss diverged at epoch " + std::to_string(epoch) + ", batch " +
                std::to_string(batch)) {}
};

struct TrainConfig {
    double lr = 5e-4;
    int batch_size = 32;  // desk-scale default; the reference setting is 128
    int epochs = 50;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    std::uint64_t seed = 42;
    double accessibility = 1.0;
    double tau_multiplier = 5.0;
    double val_fraction = 0.1;  // tail of the training split held out per class
    int patience = 8;           // stop after this many epochs without val-F1 gain

    void validate() const {
        if (!(lr > 0.0) || batch_size < 1 || epochs < 0 || weight_decay < 0.0 ||
            !(clip_norm > 0.0))
            throw Error("train config: values out of range");
        if (!(accessibility > 0.0 && accessibility <= 1.0))
            throw InvalidFraction(accessibility);
        if (!(tau_multiplier > 0.0)) throw Error("train config: tau_multiplier must be positive");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw Error("train config: val_fraction out of [0,1)");
    }
};

struct TrainLogEntry {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainResult {
    std::shared_ptr<StackedModel<Real>> model;  // best-validation parameters
    std::vector<TrainLogEntry> log;
    double train_time_s = 0.0;
    nn::AdamW<Real> optimizer;
};

/// Fills data-derived config fields (links, sample count, spatial size,
/// class labels) from a dataset split; explicit non-zero values must match.
ModelConfig resolve_config(ModelConfig proto, const DatasetSplit& split);

/// Mini-batch AdamW training with a stratified validation tail for model
/// selection. Deterministic for a given seed; a NaN loss aborts with the
/// failing epoch/batch.
TrainResult train(const DatasetSplit& split, const ModelConfig& config, const TrainConfig& tc);

/// Argmax evaluation: per-class precision/recall/F1, macro averages,
/// confusion matrix, and mean per-slot inference time.
MetricsReport evaluate(const StackedModel<Real>& model, const std::vector<LabeledSlot>& test);

struct TimingStats {
    double mean_ms = 0.0;
    double p95_ms = 0.0;
    std::vector<double> samples_ms;
};

/// Wall-clock statistics over repeated single-slot forward passes; one
/// warm-up pass is excluded.
TimingStats time_inference(const StackedModel<Real>& model,
                           const std::vector<LabeledSlot>& slots, int repetitions);

/// One end-to-end run: degrade -> select tau -> slice -> split -> train ->
/// evaluate, everything derived from one seed.
struct RunResult {
    std::shared_ptr<StackedModel<Real>> model;
    MetricsReport report;
    std::vector<TrainLogEntry> log;
    double tau = 0.0;
};

RunResult run_experiment(const std::vector<FlowRecord>& flows, const ModelConfig& proto,
                         const TrainConfig& tc);

/// Re-slices, trains and evaluates once per tau multiplier (paired seeds).
std::vector<std::pair<double, MetricsReport>> sweep_tau(const std::vector<FlowRecord>& flows,
                                                        const std::vector<double>& multipliers,
                                                        const ModelConfig& proto,
                                                        const TrainConfig& tc, int jobs = 1);

/// Trains and evaluates at each accessibility level; retained flow sets are
/// nested across levels under one seed.
std::vector<std::pair<double, MetricsReport>> run_degradation(
    const std::vector<FlowRecord>& flows, const std::vector<double>& levels,
    const ModelConfig& proto, const TrainConfig& tc, int jobs = 1);

struct AblationReports {
    MetricsReport full;
    MetricsReport no_mtf;
    MetricsReport no_transformer;
};

/// Full model vs the two reduced variants on an identical split, seed and
/// budget.
AblationReports run_ablations(const DatasetSplit& split, const ModelConfig& proto,
                              const TrainConfig& tc, int jobs = 1);

/// Runs fn(0..count-1) on up to `jobs` worker threads; each call must be
/// independent and internally deterministic.
void parallel_for_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace mtfnet
