#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "qloss/grid_model.hpp"

namespace qloss {

/// Shape of a synthetic radial feeder.
struct RadialOptions {
    int n_buses = 30;
    /// Longest allowed path (in branches) from the slack bus.
    int max_depth = 15;
    /// Probability of extending the most recent bus rather than branching off.
    double chain_bias = 0.6;
    double r_min = 0.005, r_max = 0.02;
    double x_min = 0.005, x_max = 0.02;
    double load_probability = 0.7;
    /// When positive, exactly this many load buses (overrides load_probability).
    int n_loads = 0;
    double p_load_min = 0.005, p_load_max = 0.03;
    /// Reactive demand as a fraction of active demand.
    double q_ratio_min = 0.3, q_ratio_max = 0.8;
    /// When positive, loads are rescaled to these system totals (per-unit).
    double total_p = 0.0, total_q = 0.0;
    /// Switched-off tie lines between non-adjacent buses, for reconfiguration studies.
    int n_ties = 0;
    double base_mva = 10.0;
    double base_kv = 12.66;
    double slack_voltage = 1.0;
};

/// Random tree rooted at bus 1 (slack), buses numbered 1..n_buses. No inverters.
Network synthetic_radial(const RadialOptions& opt, std::uint64_t seed);

/// A 141-bus, 84-load feeder totalling 11.94 MW / 7.40 MVAr on a 10 MVA base,
/// with three switched-off tie lines.
RadialOptions feeder141_options();

struct PlacementPolicy {
    int n_pvs = 30;
    /// Shared by all PVs: each gets total_capacity / n_pvs.
    double total_capacity = 1.0;
    /// Candidate buses; empty means every non-slack bus.
    std::vector<BusId> eligible_buses;
    /// Present output drawn per PV as a fraction of its rating.
    double output_min = 0.3, output_max = 0.9;
    double pf_limit = 0.8;
};

/// Replaces the network's inverters with a random placement drawn from `seed`.
Network place_pvs(const Network& base, const PlacementPolicy& policy, std::uint64_t seed);

/// Every (off, on) pair that closes switched-off branch `on` and opens one
/// in-service branch on the loop it creates; each result stays radial.
std::vector<std::pair<BranchId, BranchId>> loop_swaps(const Network& net, BranchId on);

}  // namespace qloss
