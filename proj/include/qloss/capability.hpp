#pragma once

#include "qloss/grid_model.hpp"

namespace qloss {

/// Feasible reactive interval of one inverter at its present active output.
struct CapabilityEnvelope {
    double q_max = 0.0;
    double q_min = 0.0;
    double p_now = 0.0;
};

/// tan(arccos(pf)), exact 0.75 at pf = 0.8.
double pf_tangent(double pf_limit);

/// q_max = min(p_now * tan(phi_max), sqrt(s_rated^2 - p_now^2)), q_min = -q_max.
/// p_now above p_rated is clipped with a logged warning.
CapabilityEnvelope envelope(const InverterSpec& spec, double p_now);
inline CapabilityEnvelope envelope(const InverterSpec& spec) { return envelope(spec, spec.p_now); }

double clamp_q(const CapabilityEnvelope& env, double q_desired);

}  // namespace qloss
