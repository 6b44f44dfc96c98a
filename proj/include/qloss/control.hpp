#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qloss/grid_model.hpp"
#include "qloss/power_flow.hpp"

namespace qloss {

enum class Algorithm { no_action, llma, lfma, hybrid_llma, hybrid_lfma, opf };

std::string_view to_string(Algorithm a);
/// Accepts the CLI spellings: noaction, llma, lfma, hybrid-llma, hybrid-lfma, opf.
std::optional<Algorithm> parse_algorithm(std::string_view s);
inline constexpr Algorithm all_algorithms[] = {Algorithm::no_action,   Algorithm::llma,        Algorithm::lfma,
                                               Algorithm::hybrid_llma, Algorithm::hybrid_lfma, Algorithm::opf};

/// Loads per bus index and PV active output per inverter; what the grid
/// "is doing" before any reactive control.
struct Conditions {
    std::vector<double> p_load;
    std::vector<double> q_load;
    std::vector<double> pv_p;
};

Conditions base_conditions(const Network& net);
InjectionSet injections(const Network& net, const Conditions& cond, std::span<const double> q_setpoints = {});

/// One line of the per-round agent trace.
struct TraceRow {
    int round = 0;
    BusId bus = 0;
    std::string stage;
    double q_setpoint = 0.0;
    std::optional<BranchId> upstream_branch;
    /// Reactive flow into the bus on its upstream branch after the round's solve.
    double upstream_q = 0.0;
};

struct ControlOutcome {
    Algorithm algorithm = Algorithm::no_action;
    /// Reactive setpoint per inverter (Network::inverters order).
    std::vector<double> q;
    OperatingPoint point;
    int n_central = 0;
    /// The central stage failed and a local/previous outcome was used instead.
    bool fallback = false;
    /// The optimizer hit its iteration limit and returned its best iterate.
    bool degraded = false;
    std::vector<TraceRow> trace;

    double loss() const { return point.total_loss; }
};

}  // namespace qloss
