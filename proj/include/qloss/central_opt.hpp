#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qloss/capability.hpp"
#include "qloss/control.hpp"
#include "qloss/local_control.hpp"

namespace qloss {

/// Reactive dispatch over a subset of inverters; the rest stay at `fixed_q`.
struct OpfProblem {
    Conditions cond;
    /// Setpoint per inverter. Entries in `control_set` are the warm start.
    std::vector<double> fixed_q;
    /// Indices into Network::inverters whose setpoint is free.
    std::vector<std::size_t> control_set;
    /// One envelope per entry of `control_set`.
    std::vector<CapabilityEnvelope> bounds;
    std::array<double, 2> v_limits{0.90, 1.10};
};

/// `control` inverters (all if empty) free within their present envelopes,
/// everything else fixed at `q`.
OpfProblem make_opf_problem(const Network& net, const Conditions& cond, std::span<const double> q,
                            std::span<const std::size_t> control);

struct OpfOptions {
    /// Stationarity target on the infinity norm of the projected gradient.
    double tol = 1e-9;
    int max_iter = 200;
    /// Central-difference step for the loss gradient.
    double fd_step = 1e-6;
    /// Power-flow accuracy inside the optimizer; must sit far below fd_step^2.
    SolverOptions solver{1e-14, 1000, 50};
    double penalty_start = 1e3;
    int penalty_rounds = 6;
    /// Fault injection: fail as if the power flow had diverged.
    bool force_failure = false;
};

struct OpfResult {
    /// Full setpoint vector (fixed entries included).
    std::vector<double> q;
    OperatingPoint point;
    int iterations = 0;
    int evaluations = 0;
    double pg_norm = 0.0;
    bool converged = false;
    bool degraded = false;
    bool voltage_feasible = true;
    std::vector<std::string> binding;
};

/// Locally optimal loss-minimizing setpoints by projected BFGS with
/// finite-difference gradients; voltage limits via a growing quadratic penalty.
/// Throws ConvergenceError when a power-flow evaluation fails.
OpfResult solve_opf(const Network& net, const OpfProblem& prob, const OpfOptions& opt = {});

struct ReserveEntry {
    std::size_t inverter = 0;
    BusId bus = 0;
    double q_res = 0.0;
};

/// Sorted by q_res descending, ties by lowest bus id.
struct ReserveRanking {
    std::vector<ReserveEntry> entries;
};

struct ReserveInput {
    BusId bus = 0;
    CapabilityEnvelope env;
    double q_setpoint = 0.0;
};

ReserveRanking reserve_ranking(std::span<const ReserveInput> states);
ReserveRanking reserve_ranking(const Network& net, const Conditions& cond, std::span<const double> q);

struct HybridOptions {
    OpfOptions opf{};
    LocalOptions local{};
};

/// Hybrid coordinator starting from an already computed local outcome.
/// On OPF failure the local outcome is returned with `fallback` set.
ControlOutcome run_hybrid(const Network& net, const Conditions& cond, const ControlOutcome& local, std::size_t n,
                          const HybridOptions& opt = {});
ControlOutcome run_hybrid(const Network& net, const Conditions& cond, Algorithm base_algo, std::size_t n,
                          const HybridOptions& opt = {});

/// Centralized OPF over every inverter, warm-started at no-action.
/// On failure returns the no-action outcome with `fallback` set.
ControlOutcome run_central(const Network& net, const Conditions& cond, const HybridOptions& opt = {});

/// Dispatches any Algorithm with the given central-controller count for the hybrids.
ControlOutcome run_algorithm(const Network& net, const Conditions& cond, Algorithm algo, std::size_t n_central,
                             const HybridOptions& opt = {});

struct MinControllers {
    std::size_t n = 0;
    double hybrid_loss = 0.0;
    double opf_loss = 0.0;
    /// hybrid_loss / opf_loss - 1
    double gap = 0.0;
};

/// Smallest n with hybrid loss <= (1 + rel_gap) * full-OPF loss + abs_slack,
/// found by bisection over the frozen reserve ranking.
MinControllers min_controllers(const Network& net, const Conditions& cond, Algorithm base_algo, double rel_gap,
                               const HybridOptions& opt = {}, double abs_slack = 1e-9);
/// Same, reusing precomputed local and full-OPF losses.
MinControllers min_controllers(const Network& net, const Conditions& cond, const ControlOutcome& local,
                               double opf_loss, double rel_gap, const HybridOptions& opt = {},
                               double abs_slack = 1e-9);

/// iterations,final_loss,pg_norm,converged,degraded,binding
void write_opf_report(std::ostream& out, const OpfResult& res);

}  // namespace qloss
