#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "mtfnet/common.hpp"

namespace mtfnet {

enum class Protocol : std::uint8_t { Tcp = 0, Udp = 1 };

inline const char* to_string(Protocol p) { return p == Protocol::Tcp ? "TCP" : "UDP"; }

/// One parsed flow event. Volume is a total packet count spread uniformly
/// over [start_time, start_time + duration).
struct FlowRecord {
    double start_time = 0.0;  // seconds, >= 0
    double duration = 0.0;    // seconds, > 0
    std::string src;
    std::string dst;
    Protocol protocol = Protocol::Tcp;
    double packets = 0.0;
    std::string label;
};

/// A directed (source, destination, protocol) triple. Total order gives the
/// deterministic link index l.
struct LinkKey {
    std::string src;
    std::string dst;
    Protocol protocol = Protocol::Tcp;

    friend bool operator==(const LinkKey& a, const LinkKey& b) {
        return a.src == b.src && a.dst == b.dst && a.protocol == b.protocol;
    }
    friend bool operator<(const LinkKey& a, const LinkKey& b) {
        return std::tie(a.src, a.dst, a.protocol) < std::tie(b.src, b.dst, b.protocol);
    }
};

/// Immutable, sorted registry of every link observed in a dataset. Shared by
/// all slots so each SlotSeries carries the same key set in the same order.
class LinkTable {
public:
    LinkTable() = default;
    explicit LinkTable(std::vector<LinkKey> keys) : keys_(std::move(keys)) {
        for (std::size_t i = 0; i < keys_.size(); ++i) index_.emplace(keys_[i], static_cast<int>(i));
    }

    int size() const { return static_cast<int>(keys_.size()); }
    const LinkKey& key(int l) const { return keys_.at(static_cast<std::size_t>(l)); }
    const std::vector<LinkKey>& keys() const { return keys_; }

    /// Index of a key, or -1 when absent.
    int index_of(const LinkKey& k) const {
        auto it = index_.find(k);
        return it == index_.end() ? -1 : it->second;
    }

private:
    std::vector<LinkKey> keys_;
    std::map<LinkKey, int> index_;
};

/// The multivariate series of one time slot: row l holds link l's packet
/// counts over n equal sub-intervals of the slot.
struct SlotSeries {
    int slot_index = 0;
    double tau = 0.0;
    std::shared_ptr<const LinkTable> links;
    MatR series;  // L x n, non-negative

    int link_count() const { return static_cast<int>(series.rows()); }
    int samples() const { return static_cast<int>(series.cols()); }
    bool empty_traffic() const { return series.size() == 0 || series.maxCoeff() <= Real(0); }
};

/// Binary N x N x P indicator of which node pairs communicated during the
/// slot and over which protocol. Channel 0 is TCP, channel 1 is UDP; the
/// per-pair pattern is 00 (no flow), 01 (TCP), 10 (UDP), 11 (both).
struct SpatialMatrix {
    int slot_index = 0;
    std::shared_ptr<const std::vector<std::string>> nodes;
    std::vector<std::uint8_t> cells;  // (i * N + j) * 2 + channel

    int node_count() const { return nodes ? static_cast<int>(nodes->size()) : 0; }
    std::uint8_t at(int i, int j, int channel) const {
        const int n = node_count();
        return cells.at(static_cast<std::size_t>((i * n + j) * 2 + channel));
    }

    /// Flattened cells as a 1 x (N*N*2) row, the model's fusion input.
    template <class S>
    DenseMatrix<S> flatten() const {
        DenseMatrix<S> out(1, static_cast<Eigen::Index>(cells.size()));
        for (std::size_t i = 0; i < cells.size(); ++i)
            out(0, static_cast<Eigen::Index>(i)) = static_cast<S>(cells[i]);
        return out;
    }
};

struct LabeledSlot {
    SlotSeries series;
    SpatialMatrix spatial;
    std::string label;
};

struct DatasetSplit {
    std::vector<LabeledSlot> train;
    std::vector<LabeledSlot> test;
    std::uint64_t seed = 0;
    double accessibility = 1.0;
};

}  // namespace mtfnet
