#include "mtfnet/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <thread>

namespace mtfnet {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::string> collect_labels(const DatasetSplit& split) {
    std::set<std::string> labels;
    for (const auto& s : split.train) labels.insert(s.label);
    for (const auto& s : split.test) labels.insert(s.label);
    return {labels.begin(), labels.end()};
}

int argmax_row(const MatR& row) {
    Eigen::Index best = 0;
    row.row(0).maxCoeff(&best);
    return static_cast<int>(best);
}

/// Index partition of the training list into a core and a stratified
/// validation tail.
void carve_validation(const std::vector<LabeledSlot>& train, double fraction,
                      std::vector<std::size_t>& core, std::vector<std::size_t>& val) {
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < train.size(); ++i) by_class[train[i].label].push_back(i);
    for (const auto& [label, indices] : by_class) {
        std::size_t val_n =
            static_cast<std::size_t>(std::floor(fraction * static_cast<double>(indices.size())));
        if (fraction > 0.0 && indices.size() >= 2 && val_n == 0) val_n = 1;
        const std::size_t split_at = indices.size() - val_n;
        for (std::size_t i = 0; i < indices.size(); ++i)
            (i < split_at ? core : val).push_back(indices[i]);
    }
    std::sort(core.begin(), core.end());
    std::sort(val.begin(), val.end());
}

std::vector<MtfTensor<Real>> encode_all(const StackedModel<Real>& model,
                                        const std::vector<LabeledSlot>& slots) {
    std::vector<MtfTensor<Real>> out;
    out.reserve(slots.size());
    for (const auto& s : slots) out.push_back(model.encode(s.series));
    return out;
}

double validation_macro_f1(const StackedModel<Real>& model,
                           const std::vector<LabeledSlot>& train,
                           const std::vector<std::size_t>& val) {
    if (val.empty()) return 0.0;
    std::vector<int> truth, pred;
    Rng rng(0);
    for (const auto idx : val) {
        const auto& slot = train[idx];
        const auto probs = model.forward(slot.series, slot.spatial, /*training=*/false, rng);
        truth.push_back(model.config().class_index(slot.label));
        pred.push_back(argmax_row(probs.value()));
    }
    return compute_metrics(truth, pred, model.config().class_labels).macro_f1;
}

}  // namespace

ModelConfig resolve_config(ModelConfig proto, const DatasetSplit& split) {
    if (split.train.empty()) throw EmptyDataset();
    const auto& first = split.train.front();
    const int links = first.series.link_count();
    const int samples = first.series.samples();
    const int cells = static_cast<int>(first.spatial.cells.size());

    if (proto.links == 0) proto.links = links;
    if (proto.samples_per_slot == 0) proto.samples_per_slot = samples;
    if (proto.spatial_cells == 0) proto.spatial_cells = cells;
    if (proto.class_labels.empty()) proto.class_labels = collect_labels(split);
    if (proto.links != links || proto.samples_per_slot != samples || proto.spatial_cells != cells)
        throw IncompatibleModel("config dimensions disagree with dataset");
    proto.validate();
    return proto;
}

TrainResult train(const DatasetSplit& split, const ModelConfig& config, const TrainConfig& tc) {
    tc.validate();
    if (split.train.empty()) throw EmptyDataset();
    const auto started = Clock::now();

    TrainResult result;
    result.model = std::make_shared<StackedModel<Real>>(config, tc.seed);
    StackedModel<Real>& model = *result.model;

    nn::AdamWConfig oc;
    oc.lr = tc.lr;
    oc.weight_decay = tc.weight_decay;
    oc.clip_norm = tc.clip_norm;
    result.optimizer = nn::AdamW<Real>(oc);

    std::vector<std::size_t> core, val;
    carve_validation(split.train, tc.val_fraction, core, val);
    if (core.empty()) core = val;  // degenerate tiny datasets train on everything

    // Fixed-breakpoint encodings never change during training; cache them.
    std::vector<MtfTensor<Real>> cache;
    const bool cached = config.variant != Variant::NoMtf &&
                        config.quant_mode == QuantMode::GaussianFixed;
    if (cached) cache = encode_all(model, split.train);

    auto best = model.params().snapshot();
    double best_f1 = -1.0;
    int stall = 0;

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order = core;
        Rng shuffle_rng(derive_seed(tc.seed, static_cast<std::uint64_t>(epoch)));
        shuffle(order, shuffle_rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tc.batch_size)) {
            const std::size_t end =
                std::min(order.size(), at + static_cast<std::size_t>(tc.batch_size));
            std::vector<const LabeledSlot*> batch;
            std::vector<const MtfTensor<Real>*> fields;
            for (std::size_t i = at; i < end; ++i) {
                batch.push_back(&split.train[order[i]]);
                if (cached) fields.push_back(&cache[order[i]]);
            }
            const std::uint64_t batch_seed =
                derive_seed(tc.seed, (static_cast<std::uint64_t>(epoch) << 24) ^
                                         static_cast<std::uint64_t>(batches + 1));
            double loss_value = 0.0;
            try {
                const auto loss = model.model_loss(batch, /*training=*/true, batch_seed,
                                                   cached ? &fields : nullptr);
                loss_value = static_cast<double>(loss.value()(0, 0));
                nn::backward(loss);
            } catch (const nn::NonFiniteValue&) {
                throw DivergedLoss(epoch, batches);
            }
            if (!std::isfinite(loss_value)) throw DivergedLoss(epoch, batches);
            result.optimizer.step(model.params());
            model.params().zero_grad();
            loss_sum += loss_value;
            ++batches;
        }

        const double val_f1 = validation_macro_f1(model, split.train, val);
        result.log.push_back({epoch, batches > 0 ? loss_sum / batches : 0.0, val_f1});

        if (val_f1 > best_f1) {
            best_f1 = val_f1;
            best = model.params().snapshot();
            stall = 0;
        } else if (++stall >= tc.patience && tc.patience > 0) {
            break;
        }
    }

    if (tc.epochs > 0 && !val.empty()) model.params().restore(best);
    result.train_time_s = seconds_since(started);
    return result;
}

MetricsReport evaluate(const StackedModel<Real>& model, const std::vector<LabeledSlot>& test) {
    if (test.empty()) throw EmptyDataset();
    std::vector<int> truth, pred;
    Rng rng(0);
    const auto started = Clock::now();
    for (const auto& slot : test) {
        int target = 0;
        try {
            target = model.config().class_index(slot.label);
        } catch (const LabelOutOfRange& e) {
            throw IncompatibleModel(e.what());
        }
        const auto probs = model.forward(slot.series, slot.spatial, /*training=*/false, rng);
        truth.push_back(target);
        pred.push_back(argmax_row(probs.value()));
    }
    const double elapsed_ms = seconds_since(started) * 1000.0;
    MetricsReport report = compute_metrics(truth, pred, model.config().class_labels);
    report.mean_inference_ms = elapsed_ms / static_cast<double>(test.size());
    return report;
}

TimingStats time_inference(const StackedModel<Real>& model,
                           const std::vector<LabeledSlot>& slots, int repetitions) {
    if (repetitions < 10) throw Error("time_inference: repetitions must be >= 10");
    if (slots.empty()) throw EmptyDataset();
    Rng rng(0);
    // Warm-up pass, excluded from the statistics.
    (void)model.forward(slots.front().series, slots.front().spatial, false, rng);

    TimingStats stats;
    stats.samples_ms.reserve(static_cast<std::size_t>(repetitions));
    for (int r = 0; r < repetitions; ++r) {
        const auto& slot = slots[static_cast<std::size_t>(r) % slots.size()];
        const auto t0 = Clock::now();
        (void)model.forward(slot.series, slot.spatial, false, rng);
        stats.samples_ms.push_back(seconds_since(t0) * 1000.0);
    }
    stats.mean_ms = std::accumulate(stats.samples_ms.begin(), stats.samples_ms.end(), 0.0) /
                    static_cast<double>(stats.samples_ms.size());
    auto sorted = stats.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
    stats.p95_ms = sorted[std::min(rank, sorted.size() - 1)];
    return stats;
}

RunResult run_experiment(const std::vector<FlowRecord>& flows, const ModelConfig& proto,
                         const TrainConfig& tc) {
    tc.validate();
    std::vector<FlowRecord> kept =
        tc.accessibility < 1.0 ? degrade(flows, tc.accessibility, tc.seed) : flows;
    const double tau = select_tau(kept, tc.tau_multiplier);
    const int n = proto.samples_per_slot > 0 ? proto.samples_per_slot : 32;
    const SlicedDataset sliced = slice_slots(kept, tau, n);
    const DatasetSplit split = split_dataset(labeled_slots(sliced), 0.8, tc.seed);

    ModelConfig cfg = proto;
    cfg.links = 0;
    cfg.samples_per_slot = 0;
    cfg.spatial_cells = 0;
    cfg = resolve_config(cfg, split);

    RunResult run;
    run.tau = tau;
    TrainResult trained = train(split, cfg, tc);
    run.model = trained.model;
    run.log = std::move(trained.log);
    run.report = evaluate(*run.model, split.test);
    run.report.train_time_s = trained.train_time_s;
    return run;
}

void parallel_for_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max(1, std::min<int>(jobs, static_cast<int>(count)));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= count) return;
                    fn(i);
                }
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (const auto& err : errors)
        if (err) std::rethrow_exception(err);
}

std::vector<std::pair<double, MetricsReport>> sweep_tau(const std::vector<FlowRecord>& flows,
                                                        const std::vector<double>& multipliers,
                                                        const ModelConfig& proto,
                                                        const TrainConfig& tc, int jobs) {
    for (const double m : multipliers)
        if (!(m > 0.0)) throw Error("sweep_tau: multipliers must be positive");
    std::vector<std::pair<double, MetricsReport>> out(multipliers.size());
    parallel_for_jobs(multipliers.size(), jobs, [&](std::size_t i) {
        TrainConfig local = tc;
        local.tau_multiplier = multipliers[i];
        out[i] = {multipliers[i], run_experiment(flows, proto, local).report};
    });
    return out;
}

std::vector<std::pair<double, MetricsReport>> run_degradation(
    const std::vector<FlowRecord>& flows, const std::vector<double>& levels,
    const ModelConfig& proto, const TrainConfig& tc, int jobs) {
    for (const double level : levels)
        if (!(level > 0.0 && level <= 1.0)) throw InvalidFraction(level);
    std::vector<std::pair<double, MetricsReport>> out(levels.size());
    parallel_for_jobs(levels.size(), jobs, [&](std::size_t i) {
        TrainConfig local = tc;
        local.accessibility = levels[i];
        out[i] = {levels[i], run_experiment(flows, proto, local).report};
    });
    return out;
}

AblationReports run_ablations(const DatasetSplit& split, const ModelConfig& proto,
                              const TrainConfig& tc, int jobs) {
    const Variant variants[3] = {Variant::Full, Variant::NoMtf, Variant::NoTransformer};
    MetricsReport reports[3];
    parallel_for_jobs(3, jobs, [&](std::size_t i) {
        ModelConfig cfg = proto;
        cfg.variant = variants[i];
        cfg = resolve_config(cfg, split);
        const TrainResult trained = train(split, cfg, tc);
        reports[i] = evaluate(*trained.model, split.test);
        reports[i].train_time_s = trained.train_time_s;
    });
    return {reports[0], reports[1], reports[2]};
}

}  // namespace mtfnet
