#include "qloss/capability.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

namespace qloss {

double pf_tangent(double pf_limit) {
    // sqrt(1 - pf^2) / pf; 0.8 gives 0.6 / 0.8 = 0.75 exactly.
    if (pf_limit == 0.8) return 0.75;
    return std::sqrt(std::max(0.0, 1.0 - pf_limit * pf_limit)) / pf_limit;
}

CapabilityEnvelope envelope(const InverterSpec& spec, double p_now) {
    if (p_now > spec.p_rated) {
        spdlog::warn("inverter at bus {}: active output {} exceeds rating {}, clipping", spec.bus, p_now,
                     spec.p_rated);
        p_now = spec.p_rated;
    }
    p_now = std::max(p_now, 0.0);
    const double pf_bound = p_now * pf_tangent(spec.pf_limit);
    const double s_bound = std::sqrt(std::max(0.0, spec.s_rated * spec.s_rated - p_now * p_now));
    const double q_max = std::min(pf_bound, s_bound);
    return {q_max, -q_max, p_now};
}

double clamp_q(const CapabilityEnvelope& env, double q_desired) {
    if (std::isnan(q_desired)) return 0.0;
    return std::clamp(q_desired, env.q_min, env.q_max);
}

}  // namespace qloss
