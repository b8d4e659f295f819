#include "mtfnet/archive.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mtfnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kSlotMagic[4] = {'M', 'T', 'F', 'S'};
constexpr char kFieldMagic[4] = {'M', 'T', 'F', 'F'};
constexpr std::uint16_t kVersion = 1;

std::string slot_path(const std::string& dir, int index) {
    char name[32];
    std::snprintf(name, sizeof(name), "slot_%06d.mtfs", index);
    return (fs::path(dir) / name).string();
}

std::string field_path(const std::string& dir, int index) {
    char name[32];
    std::snprintf(name, sizeof(name), "mtf_%06d.mtff", index);
    return (fs::path(dir) / name).string();
}

json links_to_json(const LinkTable& links) {
    json arr = json::array();
    for (const auto& key : links.keys())
        arr.push_back({{"src", key.src}, {"dst", key.dst}, {"protocol", to_string(key.protocol)}});
    return arr;
}

std::shared_ptr<const LinkTable> links_from_json(const json& arr) {
    std::vector<LinkKey> keys;
    for (const auto& item : arr) {
        LinkKey key;
        key.src = item.at("src").get<std::string>();
        key.dst = item.at("dst").get<std::string>();
        key.protocol =
            item.at("protocol").get<std::string>() == "UDP" ? Protocol::Udp : Protocol::Tcp;
        keys.push_back(std::move(key));
    }
    return std::make_shared<const LinkTable>(std::move(keys));
}

}  // namespace

void write_slot_archive(const std::string& dir, const SlicedDataset& dataset) {
    fs::create_directories(dir);

    json manifest;
    manifest["version"] = kVersion;
    manifest["tau"] = dataset.tau;
    manifest["samples_per_slot"] = dataset.samples_per_slot;
    manifest["slot_count"] = dataset.slots.size();
    manifest["links"] = links_to_json(*dataset.links);
    manifest["nodes"] = *dataset.nodes;
    {
        std::ofstream out((fs::path(dir) / "manifest.json").string());
        if (!out) throw ArchiveError("cannot write manifest in " + dir);
        out << manifest.dump(2) << "\n";
    }

    for (const auto& slot : dataset.slots) {
        std::ofstream out(slot_path(dir, slot.series.slot_index), std::ios::binary);
        if (!out) throw ArchiveError("cannot write slot file in " + dir);
        binio::write_bytes(out, kSlotMagic, 4);
        binio::write_u16(out, kVersion);
        binio::write_u32(out, static_cast<std::uint32_t>(slot.series.link_count()));
        binio::write_u32(out, static_cast<std::uint32_t>(slot.series.samples()));
        for (int l = 0; l < slot.series.link_count(); ++l)
            for (int k = 0; k < slot.series.samples(); ++k)
                binio::write_f32(out, static_cast<float>(slot.series.series(l, k)));
        binio::write_lpstr(out, slot.label);
        binio::write_bytes(out, slot.spatial.cells.data(), slot.spatial.cells.size());
        if (!out) throw ArchiveError("write failure in " + dir);
    }
}

SlicedDataset read_slot_archive(const std::string& dir) {
    std::ifstream mf((fs::path(dir) / "manifest.json").string());
    if (!mf) throw ArchiveError("missing manifest.json in " + dir);
    json manifest = json::parse(mf, nullptr, /*allow_exceptions=*/false);
    if (manifest.is_discarded()) throw ArchiveError("unparseable manifest.json in " + dir);

    SlicedDataset dataset;
    dataset.tau = manifest.at("tau").get<double>();
    dataset.samples_per_slot = manifest.at("samples_per_slot").get<int>();
    dataset.links = links_from_json(manifest.at("links"));
    dataset.nodes = std::make_shared<const std::vector<std::string>>(
        manifest.at("nodes").get<std::vector<std::string>>());
    const auto slot_count = manifest.at("slot_count").get<int>();

    const int node_count = static_cast<int>(dataset.nodes->size());
    const std::size_t spatial_bytes = static_cast<std::size_t>(node_count) * node_count * 2;

    for (int t = 0; t < slot_count; ++t) {
        std::ifstream in(slot_path(dir, t), std::ios::binary);
        if (!in) throw ArchiveError("missing slot file " + slot_path(dir, t));
        binio::expect_magic(in, kSlotMagic, "slot archive");
        binio::expect_version(in, kVersion, "slot archive");
        const auto link_count = binio::read_u32(in, "link count");
        const auto samples = binio::read_u32(in, "sample count");
        if (static_cast<int>(link_count) != dataset.links->size())
            throw ArchiveError("slot link count disagrees with manifest");
        if (static_cast<int>(samples) != dataset.samples_per_slot)
            throw ArchiveError("slot sample count disagrees with manifest");

        LabeledSlot slot;
        slot.series.slot_index = t;
        slot.series.tau = dataset.tau;
        slot.series.links = dataset.links;
        slot.series.series.resize(link_count, samples);
        for (std::uint32_t l = 0; l < link_count; ++l)
            for (std::uint32_t k = 0; k < samples; ++k)
                slot.series.series(l, k) = static_cast<Real>(binio::read_f32(in));
        slot.label = binio::read_lpstr(in, "label");

        slot.spatial.slot_index = t;
        slot.spatial.nodes = dataset.nodes;
        slot.spatial.cells.resize(spatial_bytes);
        binio::read_bytes(in, slot.spatial.cells.data(), spatial_bytes, "spatial tensor");
        for (const auto cell : slot.spatial.cells)
            if (cell > 1) throw ArchiveError("spatial tensor is not binary");
        dataset.slots.push_back(std::move(slot));
    }
    return dataset;
}

void write_mtf_archive(const std::string& dir, const std::vector<MtfTensor<Real>>& tensors,
                       const MtfArchiveMeta& meta) {
    fs::create_directories(dir);

    json manifest;
    manifest["version"] = kVersion;
    manifest["q"] = meta.q;
    manifest["m"] = meta.m;
    manifest["sigma"] = meta.sigma;
    manifest["mode"] = to_string(meta.mode);
    manifest["temperature"] = meta.temperature;
    manifest["slot_count"] = tensors.size();
    {
        std::ofstream out((fs::path(dir) / "mtf_manifest.json").string());
        if (!out) throw ArchiveError("cannot write mtf manifest in " + dir);
        out << manifest.dump(2) << "\n";
    }

    for (const auto& tensor : tensors) {
        std::ofstream out(field_path(dir, tensor.slot_index), std::ios::binary);
        if (!out) throw ArchiveError("cannot write field file in " + dir);
        binio::write_bytes(out, kFieldMagic, 4);
        binio::write_u16(out, kVersion);
        binio::write_u32(out, static_cast<std::uint32_t>(tensor.fields.size()));
        binio::write_u32(out, static_cast<std::uint32_t>(meta.m));
        for (const auto& field : tensor.fields) {
            if (field.values.rows() != meta.m || field.values.cols() != meta.m)
                throw ArchiveError("field size disagrees with archive meta");
            for (Eigen::Index i = 0; i < field.values.rows(); ++i)
                for (Eigen::Index j = 0; j < field.values.cols(); ++j)
                    binio::write_f32(out, static_cast<float>(field.values(i, j)));
        }
        if (!out) throw ArchiveError("write failure in " + dir);
    }
}

std::vector<MtfTensor<Real>> read_mtf_archive(const std::string& dir, MtfArchiveMeta* meta_out) {
    std::ifstream mf((fs::path(dir) / "mtf_manifest.json").string());
    if (!mf) throw ArchiveError("missing mtf_manifest.json in " + dir);
    json manifest = json::parse(mf, nullptr, /*allow_exceptions=*/false);
    if (manifest.is_discarded()) throw ArchiveError("unparseable mtf_manifest.json in " + dir);

    MtfArchiveMeta meta;
    meta.q = manifest.at("q").get<int>();
    meta.m = manifest.at("m").get<int>();
    meta.sigma = manifest.at("sigma").get<double>();
    meta.mode = manifest.at("mode").get<std::string>() == "adaptive" ? QuantMode::Adaptive
                                                                     : QuantMode::GaussianFixed;
    meta.temperature = manifest.at("temperature").get<double>();
    if (meta_out != nullptr) *meta_out = meta;
    const auto slot_count = manifest.at("slot_count").get<int>();

    std::vector<MtfTensor<Real>> tensors;
    for (int t = 0; t < slot_count; ++t) {
        std::ifstream in(field_path(dir, t), std::ios::binary);
        if (!in) throw ArchiveError("missing field file " + field_path(dir, t));
        binio::expect_magic(in, kFieldMagic, "mtf archive");
        binio::expect_version(in, kVersion, "mtf archive");
        const auto link_count = binio::read_u32(in, "link count");
        const auto m = binio::read_u32(in, "field size");
        if (static_cast<int>(m) != meta.m) throw ArchiveError("field size disagrees with manifest");

        MtfTensor<Real> tensor;
        tensor.slot_index = t;
        tensor.fields.resize(link_count);
        for (auto& field : tensor.fields) {
            field.blurred_size = static_cast<int>(m);
            field.values.resize(m, m);
            for (std::uint32_t i = 0; i < m; ++i)
                for (std::uint32_t j = 0; j < m; ++j)
                    field.values(i, j) = static_cast<Real>(binio::read_f32(in));
        }
        tensors.push_back(std::move(tensor));
    }
    return tensors;
}

void write_pgm(const std::string& path, const MatR& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArchiveError("cannot write " + path);
    out << "P5\n" << values.cols() << " " << values.rows() << "\n255\n";
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            const double v = std::clamp(static_cast<double>(values(i, j)), 0.0, 1.0);
            const auto byte = static_cast<unsigned char>(std::lround(v * 255.0));
            out.put(static_cast<char>(byte));
        }
    }
    if (!out) throw ArchiveError("write failure on " + path);
}

}  // namespace mtfnet
