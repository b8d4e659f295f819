#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mtfnet/flow.hpp"

namespace mtfnet {

struct MissingColumn : Error {
    explicit MissingColumn(const std::string& col) : Error("missing column: " + col) {}
};
struct EmptyInput : Error {
    EmptyInput() : Error("empty input") {}
};
struct NoFlows : Error {
    NoFlows() : Error("no flows to slice") {}
};
struct UnknownNode : Error {
    explicit UnknownNode(const std::string& node) : Error("unknown node: " + node) {}
};
struct InvalidFraction : Error {
    explicit InvalidFraction(double f) : Error("fraction out of (0,1]: " + std::to_string(f)) {}
};
struct TooFewSamples : Error {
    explicit TooFewSamples(std::size_t n) : Error("too few labeled slots: " + std::to_string(n)) {}
};

/// Column names of the flow CSV. Any name can be remapped to match a
/// foreign header.
struct CsvSchema {
    std::string start_time = "start_time";
    std::string duration = "duration";
    std::string src = "src_ip";
    std::string dst = "dst_ip";
    std::string protocol = "protocol";
    std::string packets = "packet_count";
    std::string label = "label";
};

struct ParseReport {
    std::vector<FlowRecord> flows;
    std::size_t rows_read = 0;
    std::size_t skipped_malformed = 0;
    std::size_t skipped_protocol = 0;
};

/// Parses an InSDN-style flow CSV. Malformed rows and rows with an
/// unsupported protocol are skipped and counted, never fatal; a header
/// missing a schema column throws MissingColumn.
ParseReport parse_flows(std::istream& in, const CsvSchema& schema = {});

/// Slot duration as multiplier x min flow duration (default multiplier 5).
double select_tau(const std::vector<FlowRecord>& flows, double multiplier = 5.0);

/// All slots of a dataset plus the shared link/node registries.
struct SlicedDataset {
    std::vector<LabeledSlot> slots;  // every window, including empty ones (label "")
    std::shared_ptr<const LinkTable> links;
    std::shared_ptr<const std::vector<std::string>> nodes;
    double tau = 0.0;
    int samples_per_slot = 0;
};

/// Partitions [0, max end time) into windows of width tau and bins each
/// link's volume into n equal sub-intervals per window. A flow's volume is
/// spread uniformly over its duration, so windows and sub-intervals receive
/// exactly their overlap share. Each slot is labeled by the class with the
/// largest volume contribution (ties broken lexicographically, "" when the
/// window saw no traffic) and paired with its spatial matrix.
SlicedDataset slice_slots(const std::vector<FlowRecord>& flows, double tau, int n);

/// Spatial matrix of one slot: cell (i, j, channel) is 1 iff the matching
/// link carried traffic in the slot.
SpatialMatrix build_spatial(const SlotSeries& slot,
                            std::shared_ptr<const std::vector<std::string>> nodes);

/// Keeps ceil(accessibility * count) flows, chosen as a prefix of one seeded
/// permutation so retained sets are nested across accessibility levels.
/// Output preserves the original record order; accessibility 1.0 is the
/// identity.
std::vector<FlowRecord> degrade(const std::vector<FlowRecord>& flows, double accessibility,
                                std::uint64_t seed);

/// Stratified shuffle split: train receives floor(ratio * count) slots per
/// class, the remainder goes to test.
DatasetSplit split_dataset(const std::vector<LabeledSlot>& slots, double ratio,
                           std::uint64_t seed);

/// Slots that actually carry traffic (and hence a label); the model's
/// training unit.
std::vector<LabeledSlot> labeled_slots(const SlicedDataset& dataset);

}  // namespace mtfnet
