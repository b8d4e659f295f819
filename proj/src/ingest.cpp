#include "mtfnet/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <set>

namespace mtfnet {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trimmed(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::optional<double> parse_double(const std::string& raw) {
    const std::string s = trimmed(raw);
    if (s.empty()) return std::nullopt;
    double value = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
    return value;
}

std::optional<Protocol> parse_protocol(const std::string& raw) {
    std::string s = trimmed(raw);
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (s == "TCP" || s == "6") return Protocol::Tcp;
    if (s == "UDP" || s == "17") return Protocol::Udp;
    return std::nullopt;
}

}  // namespace

ParseReport parse_flows(std::istream& in, const CsvSchema& schema) {
    std::string line;
    if (!std::getline(in, line)) throw MissingColumn(schema.start_time);
    const auto header = split_csv_line(line);

    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (trimmed(header[i]) == name) return static_cast<int>(i);
        throw MissingColumn(name);
    };
    const int c_start = column(schema.start_time);
    const int c_dur = column(schema.duration);
    const int c_src = column(schema.src);
    const int c_dst = column(schema.dst);
    const int c_proto = column(schema.protocol);
    const int c_pkts = column(schema.packets);
    const int c_label = column(schema.label);
    const int max_col = std::max({c_start, c_dur, c_src, c_dst, c_proto, c_pkts, c_label});

    ParseReport report;
    while (std::getline(in, line)) {
        if (trimmed(line).empty()) continue;
        ++report.rows_read;
        const auto fields = split_csv_line(line);
        if (static_cast<int>(fields.size()) <= max_col) {
            ++report.skipped_malformed;
            continue;
        }
        const auto start = parse_double(fields[c_start]);
        const auto dur = parse_double(fields[c_dur]);
        const auto pkts = parse_double(fields[c_pkts]);
        if (!start || !dur || !pkts || *start < 0.0 || *dur <= 0.0 || *pkts < 0.0) {
            ++report.skipped_malformed;
            continue;
        }
        const auto proto = parse_protocol(fields[c_proto]);
        if (!proto) {
            ++report.skipped_protocol;
            continue;
        }
        FlowRecord rec;
        rec.start_time = *start;
        rec.duration = *dur;
        rec.src = trimmed(fields[c_src]);
        rec.dst = trimmed(fields[c_dst]);
        rec.protocol = *proto;
        rec.packets = *pkts;
        rec.label = trimmed(fields[c_label]);
        if (rec.src.empty() || rec.dst.empty()) {
            ++report.skipped_malformed;
            continue;
        }
        report.flows.push_back(std::move(rec));
    }
    return report;
}

double select_tau(const std::vector<FlowRecord>& flows, double multiplier) {
    if (flows.empty()) throw EmptyInput();
    double min_dur = flows.front().duration;
    for (const auto& f : flows) min_dur = std::min(min_dur, f.duration);
    return multiplier * min_dur;
}

SlicedDataset slice_slots(const std::vector<FlowRecord>& flows, double tau, int n) {
    if (flows.empty()) throw NoFlows();
    if (tau <= 0.0) throw Error("tau must be positive");
    if (n < 2) throw Error("samples per slot must be >= 2");

    std::set<LinkKey> key_set;
    std::set<std::string> node_set;
    double max_end = 0.0;
    for (const auto& f : flows) {
        key_set.insert(LinkKey{f.src, f.dst, f.protocol});
        node_set.insert(f.src);
        node_set.insert(f.dst);
        max_end = std::max(max_end, f.start_time + f.duration);
    }
    auto links = std::make_shared<const LinkTable>(
        std::vector<LinkKey>(key_set.begin(), key_set.end()));
    auto nodes = std::make_shared<const std::vector<std::string>>(node_set.begin(), node_set.end());

    const int slot_count = std::max(1, static_cast<int>(std::ceil(max_end / tau - 1e-12)));
    const int link_count = links->size();

    // Accumulate in double, cast once; keeps the exact-partition invariant
    // well inside float32 rounding.
    std::vector<DenseMatrix<double>> acc(
        static_cast<std::size_t>(slot_count),
        DenseMatrix<double>::Zero(link_count, n));
    std::vector<std::map<std::string, double>> label_volume(
        static_cast<std::size_t>(slot_count));

    const double sample_width = tau / n;
    for (const auto& f : flows) {
        const int l = links->index_of(LinkKey{f.src, f.dst, f.protocol});
        const double rate = f.packets / f.duration;
        const double end = f.start_time + f.duration;
        int first = static_cast<int>(std::floor(f.start_time / sample_width));
        int last = static_cast<int>(std::floor(end / sample_width));
        first = std::max(first, 0);
        last = std::min(last, slot_count * n - 1);
        for (int g = first; g <= last; ++g) {
            const double a = g * sample_width;
            const double b = a + sample_width;
            const double overlap = std::min(b, end) - std::max(a, f.start_time);
            if (overlap <= 0.0) continue;
            const double volume = rate * overlap;
            const int t = g / n;
            acc[static_cast<std::size_t>(t)](l, g - t * n) += volume;
            label_volume[static_cast<std::size_t>(t)][f.label] += volume;
        }
    }

    SlicedDataset out;
    out.links = links;
    out.nodes = nodes;
    out.tau = tau;
    out.samples_per_slot = n;
    out.slots.reserve(static_cast<std::size_t>(slot_count));
    for (int t = 0; t < slot_count; ++t) {
        LabeledSlot slot;
        slot.series.slot_index = t;
        slot.series.tau = tau;
        slot.series.links = links;
        slot.series.series = acc[static_cast<std::size_t>(t)].cast<Real>();
        std::string best;
        double best_volume = 0.0;
        for (const auto& [label, volume] : label_volume[static_cast<std::size_t>(t)]) {
            if (volume > best_volume) {
                best = label;
                best_volume = volume;
            }
        }
        slot.label = best;
        slot.spatial = build_spatial(slot.series, nodes);
        out.slots.push_back(std::move(slot));
    }
    return out;
}

SpatialMatrix build_spatial(const SlotSeries& slot,
                            std::shared_ptr<const std::vector<std::string>> nodes) {
    SpatialMatrix sm;
    sm.slot_index = slot.slot_index;
    sm.nodes = std::move(nodes);
    const int n = sm.node_count();
    sm.cells.assign(static_cast<std::size_t>(n) * n * 2, 0);

    auto node_index = [&](const std::string& name) {
        const auto& list = *sm.nodes;
        const auto it = std::lower_bound(list.begin(), list.end(), name);
        if (it == list.end() || *it != name) throw UnknownNode(name);
        return static_cast<int>(it - list.begin());
    };

    for (int l = 0; l < slot.link_count(); ++l) {
        if (slot.series.row(l).maxCoeff() <= Real(0)) continue;
        const LinkKey& key = slot.links->key(l);
        const int i = node_index(key.src);
        const int j = node_index(key.dst);
        const int channel = key.protocol == Protocol::Tcp ? 0 : 1;
        sm.cells[static_cast<std::size_t>((i * n + j) * 2 + channel)] = 1;
    }
    return sm;
}

std::vector<FlowRecord> degrade(const std::vector<FlowRecord>& flows, double accessibility,
                                std::uint64_t seed) {
    if (!(accessibility > 0.0 && accessibility <= 1.0)) throw InvalidFraction(accessibility);
    if (accessibility == 1.0) return flows;

    std::vector<std::size_t> perm(flows.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    shuffle(perm, rng);

    const auto keep = static_cast<std::size_t>(
        std::ceil(accessibility * static_cast<double>(flows.size())));
    std::vector<std::size_t> kept(perm.begin(), perm.begin() + std::min(keep, perm.size()));
    std::sort(kept.begin(), kept.end());  // original record order

    std::vector<FlowRecord> out;
    out.reserve(kept.size());
    for (const auto idx : kept) out.push_back(flows[idx]);
    return out;
}

DatasetSplit split_dataset(const std::vector<LabeledSlot>& slots, double ratio,
                           std::uint64_t seed) {
    if (slots.size() < 2) throw TooFewSamples(slots.size());
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidFraction(ratio);

    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < slots.size(); ++i) by_class[slots[i].label].push_back(i);

    DatasetSplit split;
    split.seed = seed;
    Rng rng(seed);
    for (auto& [label, indices] : by_class) {
        shuffle(indices, rng);
        const auto train_n = static_cast<std::size_t>(
            std::floor(ratio * static_cast<double>(indices.size())));
        for (std::size_t i = 0; i < indices.size(); ++i) {
            (i < train_n ? split.train : split.test).push_back(slots[indices[i]]);
        }
    }
    return split;
}

std::vector<LabeledSlot> labeled_slots(const SlicedDataset& dataset) {
    std::vector<LabeledSlot> out;
    for (const auto& slot : dataset.slots)
        if (!slot.label.empty()) out.push_back(slot);
    return out;
}

}  // namespace mtfnet
