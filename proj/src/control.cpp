#include "qloss/control.hpp"

namespace qloss {

std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::no_action: return "noaction";
        case Algorithm::llma: return "llma";
        case Algorithm::lfma: return "lfma";
        case Algorithm::hybrid_llma: return "hybrid-llma";
        case Algorithm::hybrid_lfma: return "hybrid-lfma";
        case Algorithm::opf: return "opf";
    }
    return "?";
}

std::optional<Algorithm> parse_algorithm(std::string_view s) {
    for (auto a : all_algorithms) {
        if (to_string(a) == s) return a;
    }
    return std::nullopt;
}

Conditions base_conditions(const Network& net) {
    Conditions c;
    c.p_load = net.bus_p_load();
    c.q_load = net.bus_q_load();
    c.pv_p.reserve(net.inverters.size());
    for (const auto& inv : net.inverters) c.pv_p.push_back(inv.p_now);
    return c;
}

InjectionSet injections(const Network& net, const Conditions& cond, std::span<const double> q_setpoints) {
    return make_injections(net, cond.p_load, cond.q_load, cond.pv_p, q_setpoints);
}

}  // namespace qloss
