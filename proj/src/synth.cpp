#include "mtfnet/synth.hpp"

#include <cmath>

namespace mtfnet {

void SyntheticSpec::validate() const {
    if (classes.empty()) throw InvalidSpec("need at least one class");
    if (node_count < 2) throw InvalidSpec("need at least two nodes");
    if (windows < 1) throw InvalidSpec("need at least one window");
    if (!(window_seconds > 0.0)) throw InvalidSpec("window_seconds must be positive");
    if (flows_per_window < 1) throw InvalidSpec("flows_per_window must be >= 1");
    if (!(base_volume > 0.0)) throw InvalidSpec("base_volume must be positive");
    if (noise < 0.0 || noise >= 1.0) throw InvalidSpec("noise must be in [0, 1)");
    if (link_endpoints.empty()) throw InvalidSpec("need at least one link");
    for (const auto& [src, dst] : link_endpoints) {
        if (src < 0 || src >= node_count || dst < 0 || dst >= node_count)
            throw InvalidSpec("link endpoint outside node range");
        if (src == dst) throw InvalidSpec("self-loop link");
    }
    for (const auto& recipe : classes) {
        if (recipe.label.empty()) throw InvalidSpec("empty class label");
        if (!(recipe.rate_scale > 0.0)) throw InvalidSpec("rate_scale must be positive");
    }
}

std::vector<FlowRecord> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);

    auto node_name = [](int i) { return "10.0.0." + std::to_string(i + 1); };

    std::vector<FlowRecord> flows;
    const double sub = spec.min_flow_duration();
    const int f = spec.flows_per_window;

    for (int w = 0; w < spec.windows; ++w) {
        const auto& recipe = spec.classes[static_cast<std::size_t>(w) % spec.classes.size()];
        const bool phase = uniform01(rng) < 0.5;  // bursty windows start high or low
        for (std::size_t li = 0; li < spec.link_endpoints.size(); ++li) {
            const auto [src, dst] = spec.link_endpoints[li];
            for (int k = 0; k < f; ++k) {
                double factor = 1.0;
                switch (recipe.pattern) {
                    case TrafficPattern::Constant:
                        factor = 1.0;
                        break;
                    case TrafficPattern::Bursty:
                        factor = ((k + (phase ? 1 : 0)) % 2 == 0) ? 1.8 : 0.2;
                        break;
                    case TrafficPattern::Ramp:
                        factor = 2.0 * (k + 1) / (f + 1);  // mean stays ~1
                        break;
                }
                const double jitter =
                    spec.noise > 0.0 ? 1.0 + spec.noise * (2.0 * uniform01(rng) - 1.0) : 1.0;
                FlowRecord rec;
                rec.start_time = w * spec.window_seconds + k * sub;
                rec.duration = sub;
                rec.src = node_name(src);
                rec.dst = node_name(dst);
                rec.protocol = li % 2 == 0 ? Protocol::Tcp : Protocol::Udp;
                rec.packets = spec.base_volume * recipe.rate_scale * factor * jitter;
                rec.label = recipe.label;
                flows.push_back(std::move(rec));
            }
        }
    }
    return flows;
}

}  // namespace mtfnet
