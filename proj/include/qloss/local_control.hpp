#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "qloss/capability.hpp"
#include "qloss/control.hpp"

namespace qloss {

/// Direction changes smaller than this (per-unit) are treated as no flow.
inline constexpr double flow_dead_zone = 1e-7;

/// Flow on one incident branch measured at the agent's own terminal,
/// positive when directed INTO the agent's bus.
struct IncidentFlow {
    BranchId branch = 0;
    double p_in = 0.0;
    double q_in = 0.0;
};

/// Everything an agent can measure at its own bus. Nothing remote, no impedances.
struct LocalView {
    BusId bus = 0;
    double q_load = 0.0;
    double p_now = 0.0;
    std::vector<IncidentFlow> incident;

    const IncidentFlow* flow_on(BranchId k) const;
};

/// Probes a simulated grid the way a meter at one bus would. The agent loop
/// builds every LocalView through this interface only, so a test can audit
/// that no probe ever targets another bus.
class MeasurementSource {
  public:
    virtual ~MeasurementSource() = default;
    virtual double reactive_load(BusId bus) const = 0;
    virtual double pv_output(BusId bus) const = 0;
    virtual std::vector<BranchId> incident_branches(BusId bus) const = 0;
    virtual IncidentFlow flow_into(BusId bus, BranchId branch) const = 0;
};

/// Measurements taken from a solved operating point.
class GridMeasurements final : public MeasurementSource {
  public:
    GridMeasurements(const Network& net, const Conditions& cond, const OperatingPoint& point);

    double reactive_load(BusId bus) const override;
    double pv_output(BusId bus) const override;
    std::vector<BranchId> incident_branches(BusId bus) const override;
    IncidentFlow flow_into(BusId bus, BranchId branch) const override;

  private:
    const Network& net_;
    const Conditions& cond_;
    const OperatingPoint& point_;
};

LocalView observe(const MeasurementSource& source, BusId bus);

enum class Stage { idle, llma_done, increased, final_stage };
const char* to_string(Stage s);

struct AgentState {
    std::optional<BranchId> upstream_branch;
    bool leaf = false;
    double q_setpoint = 0.0;
    Stage stage = Stage::idle;
    /// Upstream reactive inflow recorded after the LLMA stage.
    double memo_q_up_H = 0.0;
    /// All incident flows recorded after the LLMA stage.
    std::vector<IncidentFlow> memo_flows_H;
};

/// min(q_load, q_max); a capacitive (negative) load is absorbed down to q_min.
double llma_setpoint(const LocalView& view, const CapabilityEnvelope& env);

struct UpstreamGuess {
    std::optional<BranchId> branch;
    bool leaf = false;
};

/// Largest apparent-power incident flow under no-action; ties go to the lowest
/// branch id. A bus with a single incident branch is a leaf.
UpstreamGuess detect_upstream(const LocalView& no_action_view);

/// q_load plus the (non-negative part of the) upstream inflow, within the envelope.
double lfma_step3(const LocalView& view, const CapabilityEnvelope& env, double q_up_H);

/// a, b both beyond the dead zone and of opposite sign.
bool reversed(double before, double after, double dead_zone = flow_dead_zone);

/// Correction after step 3; `state` carries the step-3 setpoint and the
/// flows recorded after the LLMA stage.
double lfma_step4(const LocalView& view_I, const AgentState& state, const CapabilityEnvelope& env);

struct LocalOptions {
    SolverOptions solver{};
    bool record_trace = false;
    /// Optional wrapper around each round's measurement source (e.g. an
    /// access audit). Agents observe through the returned source.
    std::function<std::unique_ptr<MeasurementSource>(const MeasurementSource&)> wrap_meter;
};

/// Lockstep simulation: no-action solve, then each step applied at every agent
/// simultaneously followed by a power-flow solve. `algo` must be no_action,
/// llma or lfma. Throws ConvergenceError when a solve fails.
ControlOutcome run_local(const Network& net, const Conditions& cond, Algorithm algo, const LocalOptions& opt = {});
ControlOutcome run_local(const Network& net, Algorithm algo, const LocalOptions& opt = {});

/// CSV: round,bus,stage,q_setpoint,upstream_branch,upstream_q
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);

}  // namespace qloss
