// mtfnet: flow ingestion, MTF encoding, training and the experiment suites
// behind one command-line front end.
//
// Exit codes: 0 success, 1 unexpected error, 2 I/O failure, 3 configuration
// or schema error, 4 training divergence.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "mtfnet/archive.hpp"
#include "mtfnet/checkpoint.hpp"
#include "mtfnet/synth.hpp"
#include "mtfnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtfnet;

namespace {

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};

/// Every tunable of the pipeline, addressable by a dotted key through the
/// config file and echoed back verbatim by each subcommand.
struct AppConfig {
    std::uint64_t seed = 42;
    int jobs = 1;
    std::string out = "out";

    // ingest.*
    int samples = 32;
    double tau = 0.0;  // 0 = derive from tau_multiplier
    double tau_multiplier = 5.0;
    CsvSchema schema;

    // encode.*
    int q = 8;
    int m = 16;
    double sigma = 1.0;
    std::string encode_mode = "gaussian";
    double temperature = 0.1;

    // model.*
    int d_model = 128;
    int heads = 8;
    int hidden = 512;
    int mlp_layers = 4;
    int head_fc_layers = 2;
    double dropout = 0.2;
    bool positional = true;
    std::string quant_mode = "adaptive";
    std::string variant = "full";

    // train.*
    double lr = 5e-4;
    int batch_size = 32;
    int epochs = 50;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    double accessibility = 1.0;
    double val_fraction = 0.1;
    int patience = 8;

    // synth.*
    int synth_nodes = 5;
    int synth_windows = 320;
    double synth_window_seconds = 10.0;
    int synth_flows_per_window = 5;
    double synth_volume = 100.0;
    double synth_noise = 0.15;
};

struct ConfigKey {
    std::string key;
    std::function<void(AppConfig&, const std::string&)> set;
    std::function<std::string(const AppConfig&)> get;
};

template <class T>
T parse_value(const std::string& key, const std::string& raw);

template <>
int parse_value<int>(const std::string& key, const std::string& raw) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": " + raw);
    }
}

template <>
double parse_value<double>(const std::string& key, const std::string& raw) {
    try {
        std::size_t used = 0;
        const double v = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": " + raw);
    }
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& raw) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": " + raw);
    }
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& raw) {
    if (raw == "1" || raw == "true" || raw == "on") return true;
    if (raw == "0" || raw == "false" || raw == "off") return false;
    throw ConfigError("bad boolean for " + key + ": " + raw);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<ConfigKey> config_registry() {
    std::vector<ConfigKey> keys;
    auto add_int = [&](const std::string& key, int AppConfig::* field) {
        keys.push_back({key,
                        [key, field](AppConfig& c, const std::string& raw) {
                            c.*field = parse_value<int>(key, raw);
                        },
                        [field](const AppConfig& c) { return std::to_string(c.*field); }});
    };
    auto add_double = [&](const std::string& key, double AppConfig::* field) {
        keys.push_back({key,
                        [key, field](AppConfig& c, const std::string& raw) {
                            c.*field = parse_value<double>(key, raw);
                        },
                        [field](const AppConfig& c) { return format_double(c.*field); }});
    };
    auto add_string = [&](const std::string& key, std::string AppConfig::* field) {
        keys.push_back({key,
                        [field](AppConfig& c, const std::string& raw) { c.*field = raw; },
                        [field](const AppConfig& c) { return c.*field; }});
    };
    auto add_schema = [&](const std::string& key, std::string CsvSchema::* field) {
        keys.push_back({key,
                        [field](AppConfig& c, const std::string& raw) { c.schema.*field = raw; },
                        [field](const AppConfig& c) { return c.schema.*field; }});
    };

    keys.push_back({"seed",
                    [](AppConfig& c, const std::string& raw) {
                        c.seed = parse_value<std::uint64_t>("seed", raw);
                    },
                    [](const AppConfig& c) { return std::to_string(c.seed); }});
    add_int("jobs", &AppConfig::jobs);
    add_string("out", &AppConfig::out);

    add_int("ingest.samples", &AppConfig::samples);
    add_double("ingest.tau", &AppConfig::tau);
    add_double("ingest.tau_multiplier", &AppConfig::tau_multiplier);
    add_schema("ingest.col_start_time", &CsvSchema::start_time);
    add_schema("ingest.col_duration", &CsvSchema::duration);
    add_schema("ingest.col_src", &CsvSchema::src);
    add_schema("ingest.col_dst", &CsvSchema::dst);
    add_schema("ingest.col_protocol", &CsvSchema::protocol);
    add_schema("ingest.col_packets", &CsvSchema::packets);
    add_schema("ingest.col_label", &CsvSchema::label);

    add_int("encode.q", &AppConfig::q);
    add_int("encode.m", &AppConfig::m);
    add_double("encode.sigma", &AppConfig::sigma);
    add_string("encode.mode", &AppConfig::encode_mode);
    add_double("encode.temperature", &AppConfig::temperature);

    add_int("model.d_model", &AppConfig::d_model);
    add_int("model.heads", &AppConfig::heads);
    add_int("model.hidden", &AppConfig::hidden);
    add_int("model.mlp_layers", &AppConfig::mlp_layers);
    add_int("model.head_fc_layers", &AppConfig::head_fc_layers);
    add_double("model.dropout", &AppConfig::dropout);
    keys.push_back({"model.positional",
                    [](AppConfig& c, const std::string& raw) {
                        c.positional = parse_value<bool>("model.positional", raw);
                    },
                    [](const AppConfig& c) { return std::string(c.positional ? "1" : "0"); }});
    add_string("model.quant_mode", &AppConfig::quant_mode);
    add_string("model.variant", &AppConfig::variant);

    add_double("train.lr", &AppConfig::lr);
    add_int("train.batch_size", &AppConfig::batch_size);
    add_int("train.epochs", &AppConfig::epochs);
    add_double("train.weight_decay", &AppConfig::weight_decay);
    add_double("train.clip_norm", &AppConfig::clip_norm);
    add_double("train.accessibility", &AppConfig::accessibility);
    add_double("train.val_fraction", &AppConfig::val_fraction);
    add_int("train.patience", &AppConfig::patience);

    add_int("synth.nodes", &AppConfig::synth_nodes);
    add_int("synth.windows", &AppConfig::synth_windows);
    add_double("synth.window_seconds", &AppConfig::synth_window_seconds);
    add_int("synth.flows_per_window", &AppConfig::synth_flows_per_window);
    add_double("synth.volume", &AppConfig::synth_volume);
    add_double("synth.noise", &AppConfig::synth_noise);
    return keys;
}

void apply_config_file(AppConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArchiveError("cannot open config file " + path);
    const auto registry = config_registry();

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool known = false;
        for (const auto& entry : registry) {
            if (entry.key == key) {
                entry.set(config, value);
                known = true;
                break;
            }
        }
        if (!known)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown key " + key);
    }
}

json resolved_config_json(const AppConfig& config) {
    json j = json::object();
    for (const auto& entry : config_registry()) j[entry.key] = entry.get(config);
    return j;
}

QuantMode parse_quant_mode(const std::string& raw) {
    if (raw == "gaussian") return QuantMode::GaussianFixed;
    if (raw == "adaptive") return QuantMode::Adaptive;
    throw ConfigError("unknown quantizer mode " + raw + " (gaussian|adaptive)");
}

Variant parse_variant(const std::string& raw) {
    if (raw == "full") return Variant::Full;
    if (raw == "no_mtf") return Variant::NoMtf;
    if (raw == "no_transformer") return Variant::NoTransformer;
    throw ConfigError("unknown variant " + raw + " (full|no_mtf|no_transformer)");
}

ModelConfig model_proto(const AppConfig& config) {
    ModelConfig proto;
    proto.samples_per_slot = config.samples;
    proto.mtf_size = config.m;
    proto.d_model = config.d_model;
    proto.heads = config.heads;
    proto.hidden = config.hidden;
    proto.mlp_layers = config.mlp_layers;
    proto.head_fc_layers = config.head_fc_layers;
    proto.dropout = config.dropout;
    proto.positional = config.positional;
    proto.variant = parse_variant(config.variant);
    proto.q = config.q;
    proto.quant_mode = parse_quant_mode(config.quant_mode);
    proto.temperature = config.temperature;
    proto.sigma = config.sigma;
    proto.links = 0;
    proto.spatial_cells = 0;
    // samples_per_slot is re-derived from the archive; keep the requested
    // value only as the slicing default.
    return proto;
}

TrainConfig train_config(const AppConfig& config) {
    TrainConfig tc;
    tc.lr = config.lr;
    tc.batch_size = config.batch_size;
    tc.epochs = config.epochs;
    tc.weight_decay = config.weight_decay;
    tc.clip_norm = config.clip_norm;
    tc.seed = config.seed;
    tc.accessibility = config.accessibility;
    tc.tau_multiplier = config.tau_multiplier;
    tc.val_fraction = config.val_fraction;
    tc.patience = config.patience;
    return tc;
}

std::vector<FlowRecord> read_flow_csv(const std::string& path, const CsvSchema& schema,
                                      ParseReport* report_out = nullptr) {
    std::ifstream in(path);
    if (!in) throw ArchiveError("cannot open " + path);
    ParseReport report = parse_flows(in, schema);
    if (report_out != nullptr) *report_out = report;
    return std::move(report.flows);
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw ArchiveError("cannot write " + path);
    out << text;
    if (!out) throw ArchiveError("write failure on " + path);
}

void emit(const json& summary) { std::cout << summary.dump(2) << std::endl; }

std::vector<double> parse_list(const std::string& raw, const std::string& what) {
    std::vector<double> values;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        values.push_back(parse_value<double>(what, item));
    }
    if (values.empty()) throw ConfigError(what + " list is empty");
    return values;
}

json report_json(const MetricsReport& report) { return json::parse(metrics_to_json(report)); }

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(const AppConfig& config, const std::string& csv_out) {
    SyntheticSpec spec;
    spec.node_count = config.synth_nodes;
    spec.windows = config.synth_windows;
    spec.window_seconds = config.synth_window_seconds;
    spec.flows_per_window = config.synth_flows_per_window;
    spec.base_volume = config.synth_volume;
    spec.noise = config.synth_noise;
    const auto flows = generate_synthetic(spec, config.seed);

    const std::string path = csv_out.empty() ? (fs::path(config.out) / "flows.csv").string()
                                             : csv_out;
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw ArchiveError("cannot write " + path);
    out << "start_time,duration,src_ip,dst_ip,protocol,packet_count,label\n";
    for (const auto& f : flows) {
        out << format_double(f.start_time) << ',' << format_double(f.duration) << ',' << f.src
            << ',' << f.dst << ',' << to_string(f.protocol) << ',' << format_double(f.packets)
            << ',' << f.label << '\n';
    }
    if (!out) throw ArchiveError("write failure on " + path);

    json summary;
    summary["command"] = "synth";
    summary["csv"] = path;
    summary["flows"] = flows.size();
    summary["classes"] = spec.classes.size();
    summary["min_flow_duration"] = spec.min_flow_duration();
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

int cmd_ingest(const AppConfig& config, const std::string& input) {
    ParseReport report;
    const auto flows = read_flow_csv(input, config.schema, &report);
    if (flows.empty()) throw EmptyInput();
    const double tau = config.tau > 0.0 ? config.tau : select_tau(flows, config.tau_multiplier);
    const SlicedDataset sliced = slice_slots(flows, tau, config.samples);
    write_slot_archive(config.out, sliced);

    json summary;
    summary["command"] = "ingest";
    summary["rows_read"] = report.rows_read;
    summary["flows"] = flows.size();
    summary["skipped_malformed"] = report.skipped_malformed;
    summary["skipped_protocol"] = report.skipped_protocol;
    summary["tau"] = tau;
    summary["slots"] = sliced.slots.size();
    summary["labeled_slots"] = labeled_slots(sliced).size();
    summary["links"] = sliced.links->size();
    summary["nodes"] = sliced.nodes->size();
    summary["archive"] = config.out;
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

int cmd_encode(const AppConfig& config, const std::string& slots_dir,
               const std::string& checkpoint, bool dump_pgm) {
    const SlicedDataset dataset = read_slot_archive(slots_dir);

    QuantizerParams<Real> params;
    if (!checkpoint.empty()) {
        const auto model = load_checkpoint(checkpoint);
        params = model.quantizer();
    } else if (parse_quant_mode(config.encode_mode) == QuantMode::Adaptive) {
        params = QuantizerParams<Real>::adaptive(config.q, static_cast<Real>(config.temperature));
    } else {
        params = QuantizerParams<Real>::gaussian(config.q);
    }

    std::vector<MtfTensor<Real>> tensors;
    tensors.reserve(dataset.slots.size());
    for (const auto& slot : dataset.slots)
        tensors.push_back(encode_slot(slot.series, params, config.m, config.sigma));

    MtfArchiveMeta meta;
    meta.q = params.q;
    meta.m = config.m;
    meta.sigma = config.sigma;
    meta.mode = params.mode;
    meta.temperature = static_cast<double>(params.temperature);
    write_mtf_archive(config.out, tensors, meta);

    if (dump_pgm) {
        const std::string pgm_dir = (fs::path(config.out) / "pgm").string();
        fs::create_directories(pgm_dir);
        for (const auto& tensor : tensors) {
            for (std::size_t l = 0; l < tensor.fields.size(); ++l) {
                char name[64];
                std::snprintf(name, sizeof(name), "slot_%06d_link_%03zu.pgm", tensor.slot_index,
                              l);
                write_pgm((fs::path(pgm_dir) / name).string(), tensor.fields[l].values);
            }
        }
    }

    json summary;
    summary["command"] = "encode";
    summary["slots"] = tensors.size();
    summary["links"] = dataset.links->size();
    summary["q"] = meta.q;
    summary["m"] = meta.m;
    summary["sigma"] = meta.sigma;
    summary["mode"] = to_string(meta.mode);
    summary["archive"] = config.out;
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

std::string train_log_text(const std::vector<TrainLogEntry>& log) {
    std::ostringstream os;
    for (const auto& entry : log) {
        char line[96];
        std::snprintf(line, sizeof(line), "%d %.6f %.6f\n", entry.epoch, entry.mean_loss,
                      entry.val_macro_f1);
        os << line;
    }
    return os.str();
}

int cmd_train(const AppConfig& config, const std::string& slots_dir) {
    const SlicedDataset dataset = read_slot_archive(slots_dir);
    const auto slots = labeled_slots(dataset);
    const DatasetSplit split = split_dataset(slots, 0.8, config.seed);

    ModelConfig cfg = resolve_config(model_proto(config), split);
    const TrainConfig tc = train_config(config);
    std::cerr << "training variant=" << to_string(cfg.variant) << " links=" << cfg.links
              << " classes=" << cfg.num_classes() << " train=" << split.train.size()
              << " test=" << split.test.size() << "\n";

    const TrainResult result = train(split, cfg, tc);
    MetricsReport report = evaluate(*result.model, split.test);
    report.train_time_s = result.train_time_s;

    fs::create_directories(config.out);
    const std::string ckpt = (fs::path(config.out) / "model.mtfm").string();
    save_checkpoint(ckpt, *result.model, &result.optimizer);
    write_text((fs::path(config.out) / "train_log.txt").string(), train_log_text(result.log));
    write_text((fs::path(config.out) / "metrics.json").string(), metrics_to_json(report) + "\n");

    json summary;
    summary["command"] = "train";
    summary["seed"] = config.seed;
    summary["checkpoint"] = ckpt;
    summary["epochs_run"] = result.log.size();
    summary["train_time_s"] = result.train_time_s;
    summary["test_macro_f1"] = report.macro_f1;
    summary["test_macro_precision"] = report.macro_precision;
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

int cmd_eval(const AppConfig& config, const std::string& slots_dir,
             const std::string& checkpoint) {
    const SlicedDataset dataset = read_slot_archive(slots_dir);
    const auto slots = labeled_slots(dataset);
    const auto model = load_checkpoint(checkpoint);
    const MetricsReport report = evaluate(model, slots);

    write_text((fs::path(config.out) / "metrics.json").string(), metrics_to_json(report) + "\n");
    json summary;
    summary["command"] = "eval";
    summary["seed"] = config.seed;
    summary["slots"] = slots.size();
    summary["report"] = report_json(report);
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

int cmd_infer(const AppConfig& config, const std::string& slots_dir,
              const std::string& checkpoint) {
    (void)config;
    const SlicedDataset dataset = read_slot_archive(slots_dir);
    const auto model = load_checkpoint(checkpoint);
    Rng rng(0);
    for (const auto& slot : dataset.slots) {
        const auto probs = model.forward(slot.series, slot.spatial, false, rng);
        Eigen::Index best = 0;
        probs.value().row(0).maxCoeff(&best);
        json line;
        line["slot"] = slot.series.slot_index;
        line["label"] = slot.label;
        line["predicted"] = model.config().class_labels[static_cast<std::size_t>(best)];
        std::vector<double> p(static_cast<std::size_t>(probs.cols()));
        for (Eigen::Index i = 0; i < probs.cols(); ++i)
            p[static_cast<std::size_t>(i)] = static_cast<double>(probs.value()(0, i));
        line["probs"] = p;
        std::cout << line.dump() << "\n";
    }
    return 0;
}

int cmd_sweep_tau(const AppConfig& config, const std::string& input,
                  const std::string& multipliers_raw) {
    const auto flows = read_flow_csv(input, config.schema);
    const auto multipliers = parse_list(multipliers_raw, "multipliers");
    const auto results =
        sweep_tau(flows, multipliers, model_proto(config), train_config(config), config.jobs);

    json table = json::array();
    for (const auto& [multiplier, report] : results) {
        table.push_back({{"multiplier", multiplier},
                         {"macro_precision", report.macro_precision},
                         {"macro_f1", report.macro_f1},
                         {"report", report_json(report)}});
    }
    write_text((fs::path(config.out) / "sweep_tau.json").string(), table.dump(2) + "\n");

    json summary;
    summary["command"] = "sweep-tau";
    summary["seed"] = config.seed;
    summary["table"] = json::array();
    for (const auto& [multiplier, report] : results)
        summary["table"].push_back(
            {{"multiplier", multiplier}, {"macro_precision", report.macro_precision}});
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

int cmd_degrade(const AppConfig& config, const std::string& input, const std::string& levels_raw) {
    const auto flows = read_flow_csv(input, config.schema);
    const auto levels = parse_list(levels_raw, "levels");
    const auto results =
        run_degradation(flows, levels, model_proto(config), train_config(config), config.jobs);

    json summary;
    summary["command"] = "degrade";
    summary["seed"] = config.seed;
    summary["levels"] = json::array();
    for (const auto& [level, report] : results) {
        char name[48];
        std::snprintf(name, sizeof(name), "degradation_%.2f.json", level);
        write_text((fs::path(config.out) / name).string(), metrics_to_json(report) + "\n");
        summary["levels"].push_back({{"level", level},
                                     {"macro_f1", report.macro_f1},
                                     {"macro_precision", report.macro_precision},
                                     {"file", name}});
    }
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

int cmd_ablate(const AppConfig& config, const std::string& slots_dir) {
    const SlicedDataset dataset = read_slot_archive(slots_dir);
    const auto slots = labeled_slots(dataset);
    const DatasetSplit split = split_dataset(slots, 0.8, config.seed);
    const AblationReports reports =
        run_ablations(split, model_proto(config), train_config(config), config.jobs);

    write_text((fs::path(config.out) / "ablation_full.json").string(),
               metrics_to_json(reports.full) + "\n");
    write_text((fs::path(config.out) / "ablation_no_mtf.json").string(),
               metrics_to_json(reports.no_mtf) + "\n");
    write_text((fs::path(config.out) / "ablation_no_transformer.json").string(),
               metrics_to_json(reports.no_transformer) + "\n");

    json summary;
    summary["command"] = "ablate";
    summary["seed"] = config.seed;
    summary["macro_f1"] = {{"full", reports.full.macro_f1},
                           {"no_mtf", reports.no_mtf.macro_f1},
                           {"no_transformer", reports.no_transformer.macro_f1}};
    summary["config"] = resolved_config_json(config);
    emit(summary);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    AppConfig config;

    // The config file applies before flag parsing so that flags win.
    try {
        for (int i = 1; i < argc; ++i) {
            const std::string arg = argv[i];
            if (arg == "--config" && i + 1 < argc) {
                apply_config_file(config, argv[i + 1]);
            } else if (arg.rfind("--config=", 0) == 0) {
                apply_config_file(config, arg.substr(9));
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"MTF-aided transformer intrusion detection pipeline"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--seed", config.seed, "base RNG seed");
    app.add_option("--jobs", config.jobs, "parallel experiment jobs");
    app.add_option("--out", config.out, "output directory");

    std::string input, slots_dir, checkpoint, csv_out;
    std::string multipliers = "1,4,5,6,7,20";
    std::string levels = "1.0,0.8,0.6";
    bool dump_pgm = false;

    auto add_model_train_flags = [&](CLI::App* cmd) {
        cmd->add_option("--q", config.q, "quantization bins");
        cmd->add_option("--m", config.m, "blurred field size");
        cmd->add_option("--sigma", config.sigma, "blur sigma");
        cmd->add_option("--temperature", config.temperature, "soft-assignment temperature");
        cmd->add_option("--quant-mode", config.quant_mode, "gaussian|adaptive");
        cmd->add_option("--variant", config.variant, "full|no_mtf|no_transformer");
        cmd->add_option("--d-model", config.d_model, "embedding width");
        cmd->add_option("--heads", config.heads, "attention heads");
        cmd->add_option("--hidden", config.hidden, "feed-forward width");
        cmd->add_option("--mlp-layers", config.mlp_layers, "feed-forward depth");
        cmd->add_option("--head-fc-layers", config.head_fc_layers, "head depth");
        cmd->add_option("--dropout", config.dropout, "dropout rate");
        cmd->add_option("--lr", config.lr, "learning rate");
        cmd->add_option("--batch-size", config.batch_size, "batch size");
        cmd->add_option("--epochs", config.epochs, "training epochs");
        cmd->add_option("--weight-decay", config.weight_decay, "decoupled weight decay");
        cmd->add_option("--clip-norm", config.clip_norm, "global gradient clip");
        cmd->add_option("--val-fraction", config.val_fraction, "validation share");
        cmd->add_option("--patience", config.patience, "early-stop patience");
        cmd->add_option("--tau-multiplier", config.tau_multiplier, "tau multiplier");
        cmd->add_option("--samples", config.samples, "samples per slot");
        cmd->add_option("--accessibility", config.accessibility, "retained flow fraction");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate the synthetic flow benchmark");
    synth->add_option("--csv", csv_out, "output CSV path (default <out>/flows.csv)");
    synth->add_option("--nodes", config.synth_nodes, "node count");
    synth->add_option("--windows", config.synth_windows, "class windows");
    synth->add_option("--window-seconds", config.synth_window_seconds, "window duration");
    synth->add_option("--flows-per-window", config.synth_flows_per_window,
                      "sub-flows per link per window");
    synth->add_option("--volume", config.synth_volume, "base packets per sub-flow");
    synth->add_option("--noise", config.synth_noise, "volume jitter fraction");

    CLI::App* ingest = app.add_subcommand("ingest", "parse a flow CSV into a slot archive");
    ingest->add_option("--input", input, "flow CSV")->required();
    ingest->add_option("--tau", config.tau, "slot duration (overrides multiplier)");
    ingest->add_option("--tau-multiplier", config.tau_multiplier,
                       "tau = multiplier x min flow duration");
    ingest->add_option("--samples", config.samples, "samples per slot");

    CLI::App* encode = app.add_subcommand("encode", "encode a slot archive into MTF fields");
    encode->add_option("--slots", slots_dir, "slot archive directory")->required();
    encode->add_option("--q", config.q, "quantization bins");
    encode->add_option("--m", config.m, "blurred field size");
    encode->add_option("--sigma", config.sigma, "blur sigma");
    encode->add_option("--mode", config.encode_mode, "gaussian|adaptive");
    encode->add_option("--temperature", config.temperature, "soft-assignment temperature");
    encode->add_option("--checkpoint", checkpoint, "reuse trained quantizer boundaries");
    encode->add_flag("--dump-pgm", dump_pgm, "write per-link PGM images");

    CLI::App* train_cmd = app.add_subcommand("train", "train on a slot archive");
    train_cmd->add_option("--slots", slots_dir, "slot archive directory")->required();
    add_model_train_flags(train_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a slot archive");
    eval_cmd->add_option("--slots", slots_dir, "slot archive directory")->required();
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    CLI::App* infer = app.add_subcommand("infer", "per-slot predictions as JSON lines");
    infer->add_option("--slots", slots_dir, "slot archive directory")->required();
    infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    CLI::App* sweep = app.add_subcommand("sweep-tau", "re-run the pipeline across tau multipliers");
    sweep->add_option("--input", input, "flow CSV")->required();
    sweep->add_option("--multipliers", multipliers, "comma-separated multipliers");
    add_model_train_flags(sweep);

    CLI::App* degrade_cmd = app.add_subcommand("degrade", "data-accessibility experiment");
    degrade_cmd->add_option("--input", input, "flow CSV")->required();
    degrade_cmd->add_option("--levels", levels, "comma-separated accessibility levels");
    add_model_train_flags(degrade_cmd);

    CLI::App* ablate = app.add_subcommand("ablate", "full vs no-MTF vs no-transformer");
    ablate->add_option("--slots", slots_dir, "slot archive directory")->required();
    add_model_train_flags(ablate);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config, csv_out);
        if (ingest->parsed()) return cmd_ingest(config, input);
        if (encode->parsed()) return cmd_encode(config, slots_dir, checkpoint, dump_pgm);
        if (train_cmd->parsed()) return cmd_train(config, slots_dir);
        if (eval_cmd->parsed()) return cmd_eval(config, slots_dir, checkpoint);
        if (infer->parsed()) return cmd_infer(config, slots_dir, checkpoint);
        if (sweep->parsed()) return cmd_sweep_tau(config, input, multipliers);
        if (degrade_cmd->parsed()) return cmd_degrade(config, input, levels);
        if (ablate->parsed()) return cmd_ablate(config, slots_dir);
    } catch (const DivergedLoss& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const MissingColumn& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IncompatibleModel& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ArchiveError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
