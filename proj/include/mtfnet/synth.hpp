#pragma once

#include <string>
#include <vector>

#include "mtfnet/flow.hpp"

namespace mtfnet {

struct InvalidSpec : Error {
    explicit InvalidSpec(const std::string& what) : Error("synthetic spec: " + what) {}
};

/// Within-window temporal shape of a traffic class. Every class drives the
/// same link set, so class identity is carried only by the shape of the
/// per-link series, never by which links are active or by total volume.
enum class TrafficPattern { Constant, Bursty, Ramp };

struct ClassRecipe {
    std::string label;
    TrafficPattern pattern = TrafficPattern::Constant;
    double rate_scale = 1.0;
};

/// Desk-scale synthetic benchmark. Time is a sequence of `windows` windows
/// of `window_seconds`; each window belongs to one class (round-robin) and
/// every link carries `flows_per_window` back-to-back sub-flows of equal
/// duration, so the minimum flow duration is window_seconds / flows_per_window
/// by construction. Sub-flow volumes follow the class pattern:
///   Constant: all equal                      -> flat series
///   Bursty:   alternating high/low, with a   -> square wave
///             random per-window phase
///   Ramp:     linearly increasing            -> rising staircase
/// Multiplicative noise perturbs each sub-flow volume.
struct SyntheticSpec {
    int node_count = 5;
    int windows = 320;
    double window_seconds = 10.0;
    int flows_per_window = 5;
    double base_volume = 100.0;
    double noise = 0.15;
    std::vector<std::pair<int, int>> link_endpoints = {{0, 1}, {1, 2}, {2, 0}, {3, 4}};
    std::vector<ClassRecipe> classes = {
        {"normal", TrafficPattern::Constant, 1.0},
        {"dos", TrafficPattern::Bursty, 1.0},
        {"probe", TrafficPattern::Ramp, 1.0},
    };

    double min_flow_duration() const { return window_seconds / flows_per_window; }
    void validate() const;
};

std::vector<FlowRecord> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace mtfnet
