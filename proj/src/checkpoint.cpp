#include "mtfnet/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace mtfnet {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'F', 'M'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kSectionEnd = 0;
constexpr std::uint8_t kSectionConfig = 1;
constexpr std::uint8_t kSectionOptimizer = 2;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::map<std::string, std::string> config_to_kv(const ModelConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["links"] = std::to_string(cfg.links);
    kv["samples_per_slot"] = std::to_string(cfg.samples_per_slot);
    kv["spatial_cells"] = std::to_string(cfg.spatial_cells);
    kv["class_labels"] = nlohmann::json(cfg.class_labels).dump();
    kv["mtf_size"] = std::to_string(cfg.mtf_size);
    kv["d_model"] = std::to_string(cfg.d_model);
    kv["heads"] = std::to_string(cfg.heads);
    kv["hidden"] = std::to_string(cfg.hidden);
    kv["mlp_layers"] = std::to_string(cfg.mlp_layers);
    kv["head_fc_layers"] = std::to_string(cfg.head_fc_layers);
    kv["dropout"] = format_double(cfg.dropout);
    kv["positional"] = cfg.positional ? "1" : "0";
    kv["variant"] = to_string(cfg.variant);
    kv["q"] = std::to_string(cfg.q);
    kv["quant_mode"] = to_string(cfg.quant_mode);
    kv["temperature"] = format_double(cfg.temperature);
    kv["sigma"] = format_double(cfg.sigma);
    return kv;
}

ModelConfig config_from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        if (it == kv.end()) throw ArchiveError("checkpoint config missing key " + key);
        return it->second;
    };
    ModelConfig cfg;
    cfg.links = std::stoi(get("links"));
    cfg.samples_per_slot = std::stoi(get("samples_per_slot"));
    cfg.spatial_cells = std::stoi(get("spatial_cells"));
    cfg.class_labels = nlohmann::json::parse(get("class_labels")).get<std::vector<std::string>>();
    cfg.mtf_size = std::stoi(get("mtf_size"));
    cfg.d_model = std::stoi(get("d_model"));
    cfg.heads = std::stoi(get("heads"));
    cfg.hidden = std::stoi(get("hidden"));
    cfg.mlp_layers = std::stoi(get("mlp_layers"));
    cfg.head_fc_layers = std::stoi(get("head_fc_layers"));
    cfg.dropout = std::stod(get("dropout"));
    cfg.positional = get("positional") == "1";
    const std::string variant = get("variant");
    cfg.variant = variant == "no_mtf"           ? Variant::NoMtf
                  : variant == "no_transformer" ? Variant::NoTransformer
                                                : Variant::Full;
    cfg.q = std::stoi(get("q"));
    cfg.quant_mode =
        get("quant_mode") == std::string("adaptive") ? QuantMode::Adaptive : QuantMode::GaussianFixed;
    cfg.temperature = std::stod(get("temperature"));
    cfg.sigma = std::stod(get("sigma"));
    return cfg;
}

void write_matrix(std::ostream& out, const MatR& m) {
    binio::write_u8(out, 2);
    binio::write_u32(out, static_cast<std::uint32_t>(m.rows()));
    binio::write_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            binio::write_f32(out, static_cast<float>(m(i, j)));
}

MatR read_matrix(std::istream& in, const std::string& name) {
    const std::uint8_t rank = binio::read_u8(in, "rank");
    if (rank != 2) throw ArchiveError("parameter " + name + " has unsupported rank");
    const auto rows = binio::read_u32(in, "rows");
    const auto cols = binio::read_u32(in, "cols");
    if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1u << 28))
        throw ArchiveError("parameter " + name + " has implausible shape");
    MatR m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = binio::read_f32(in);
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const StackedModel<Real>& model,
                     const nn::AdamW<Real>* optimizer) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArchiveError("cannot open " + path + " for writing");

    binio::write_bytes(out, kMagic, 4);
    binio::write_u16(out, kVersion);
    const auto& items = model.params().items();
    binio::write_u32(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& [name, v] : items) {
        binio::write_lpstr(out, name);
        write_matrix(out, v.value());
    }

    const auto kv = config_to_kv(model.config());
    binio::write_u8(out, kSectionConfig);
    binio::write_u32(out, static_cast<std::uint32_t>(kv.size()));
    for (const auto& [key, value] : kv) {
        binio::write_lpstr(out, key);
        binio::write_lpstr(out, value);
    }

    if (optimizer != nullptr && !optimizer->first_moments().empty()) {
        binio::write_u8(out, kSectionOptimizer);
        binio::write_u64(out, static_cast<std::uint64_t>(optimizer->step_count()));
        binio::write_u32(out, static_cast<std::uint32_t>(items.size()));
        for (std::size_t i = 0; i < items.size(); ++i) {
            binio::write_lpstr(out, items[i].first);
            write_matrix(out, optimizer->first_moments()[i]);
            write_matrix(out, optimizer->second_moments()[i]);
        }
    }
    binio::write_u8(out, kSectionEnd);
    if (!out) throw ArchiveError("write failure on " + path);
}

StackedModel<Real> load_checkpoint(const std::string& path, nn::AdamW<Real>* optimizer) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open " + path);

    binio::expect_magic(in, kMagic, "checkpoint");
    binio::expect_version(in, kVersion, "checkpoint");

    const std::uint32_t count = binio::read_u32(in, "parameter count");
    std::map<std::string, MatR> values;
    std::vector<std::string> order;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = binio::read_lpstr(in, "parameter name");
        if (values.count(name)) throw ArchiveError("duplicate parameter " + name);
        values.emplace(name, read_matrix(in, name));
        order.push_back(name);
    }

    std::map<std::string, std::string> kv;
    std::uint64_t opt_step = 0;
    std::map<std::string, std::pair<MatR, MatR>> moments;
    bool has_optimizer = false;
    for (;;) {
        const std::uint8_t tag = binio::read_u8(in, "section tag");
        if (tag == kSectionEnd) break;
        if (tag == kSectionConfig) {
            const std::uint32_t n = binio::read_u32(in, "config entries");
            for (std::uint32_t i = 0; i < n; ++i) {
                const std::string key = binio::read_lpstr(in, "config key");
                kv[key] = binio::read_lpstr(in, "config value");
            }
        } else if (tag == kSectionOptimizer) {
            has_optimizer = true;
            opt_step = binio::read_u64(in, "optimizer step");
            const std::uint32_t n = binio::read_u32(in, "optimizer entries");
            for (std::uint32_t i = 0; i < n; ++i) {
                const std::string name = binio::read_lpstr(in, "optimizer name");
                MatR m = read_matrix(in, name + ".m");
                MatR v = read_matrix(in, name + ".v");
                moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
            }
        } else {
            throw ArchiveError("unknown checkpoint section " + std::to_string(tag));
        }
    }

    if (kv.empty()) throw ArchiveError("checkpoint has no config section");
    const ModelConfig cfg = config_from_kv(kv);
    StackedModel<Real> model(cfg, /*seed=*/0);

    const auto& items = model.params().items();
    if (items.size() != values.size())
        throw ArchiveError("checkpoint holds " + std::to_string(values.size()) +
                           " parameters, model expects " + std::to_string(items.size()));
    for (const auto& [name, var] : items) {
        const auto it = values.find(name);
        if (it == values.end()) throw ArchiveError("checkpoint missing parameter " + name);
        if (it->second.rows() != var.rows() || it->second.cols() != var.cols())
            throw ArchiveError("parameter " + name + " has mismatched shape");
        var.assign(it->second);
    }

    if (optimizer != nullptr && has_optimizer) {
        optimizer->set_step_count(static_cast<std::int64_t>(opt_step));
        auto& m1 = optimizer->first_moments();
        auto& m2 = optimizer->second_moments();
        m1.clear();
        m2.clear();
        for (const auto& [name, var] : items) {
            const auto it = moments.find(name);
            if (it == moments.end()) throw ArchiveError("optimizer state missing " + name);
            m1.push_back(it->second.first);
            m2.push_back(it->second.second);
        }
    }
    return model;
}

}  // namespace mtfnet
