#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "qloss/grid_model.hpp"

namespace qloss {

/// Net injections per bus index (generation minus load). The slack entry is
/// the slack bus's own demand and is folded into slack_p / slack_q.
struct InjectionSet {
    std::vector<double> p;
    std::vector<double> q;
};

/// Injections from the network's own loads and inverter active outputs, with
/// reactive setpoints `q_setpoints` (per inverter, empty = all zero).
InjectionSet base_injections(const Network& net, std::span<const double> q_setpoints = {});

/// Same as base_injections but with externally supplied loads and PV outputs
/// (per bus index / per inverter), as used by time-series runs.
InjectionSet make_injections(const Network& net, std::span<const double> p_load, std::span<const double> q_load,
                             std::span<const double> pv_p, std::span<const double> q_setpoints);

/// Solved network state. Branch vectors are indexed by BranchId; out-of-service
/// branches carry zeros. Flows are measured at each terminal, positive in the
/// from_bus -> to_bus direction.
struct OperatingPoint {
    std::vector<double> v;
    std::vector<double> angle;
    /// Sending-end (from_bus terminal) flows.
    std::vector<double> branch_p;
    std::vector<double> branch_q;
    /// Receiving-end (to_bus terminal) flows, same direction convention.
    std::vector<double> branch_p_to;
    std::vector<double> branch_q_to;
    double slack_p = 0.0;
    double slack_q = 0.0;
    double total_loss = 0.0;
    int iterations = 0;

    double v_min() const;
    double v_max() const;
    /// Flow leaving `bus` into branch k (the terminal measurement at that bus).
    double p_out_of(const Network& net, BranchId k, BusId bus) const;
    double q_out_of(const Network& net, BranchId k, BusId bus) const;
};

struct SolverOptions {
    /// Radial: max voltage change between sweeps. Meshed: max power mismatch.
    double tol = 1e-8;
    int max_iter_radial = 100;
    int max_iter_meshed = 50;
};

/// DistFlow forward/backward sweep. Requires a radial network without taps or shunts.
OperatingPoint solve_radial(const Network& net, const InjectionSet& inj, double tol = 1e-8, int max_iter = 100);

/// Full AC Newton-Raphson on the bus admittance matrix; slack fixed, all others PQ.
OperatingPoint solve_meshed(const Network& net, const InjectionSet& inj, double tol = 1e-8, int max_iter = 50);

/// Chooses solve_radial when the network allows it, otherwise solve_meshed.
OperatingPoint solve(const Network& net, const InjectionSet& inj, const SolverOptions& opt = {});

/// Recomputes the series loss sum r * |I|^2 from sending-end flows and voltages.
double loss_of(const OperatingPoint& point, const Network& net);

struct LtcResult {
    Network net;
    OperatingPoint point;
    int tap_moves = 0;
    int iterations = 0;
    /// A controlled voltage stayed out of band because its tap hit a limit.
    bool limit_reached = false;
};

/// Deadband tap control: after each solve, every out-of-band controlled bus
/// moves its tap one step toward the band; repeats to a fixed point.
/// Raising a tap ratio lowers the voltage on the to_bus side.
LtcResult apply_ltc(const Network& net, const InjectionSet& inj, const SolverOptions& opt = {});

/// "bus,v" and "branch,p,q" tables.
void write_bus_csv(std::ostream& out, const Network& net, const OperatingPoint& point);
void write_branch_csv(std::ostream& out, const Network& net, const OperatingPoint& point);

}  // namespace qloss
