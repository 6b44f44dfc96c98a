#include "qloss/local_control.hpp"

#include <cmath>
#include <ostream>

#include "qloss/csv.hpp"
#include "qloss/errors.hpp"

namespace qloss {

const IncidentFlow* LocalView::flow_on(BranchId k) const {
    for (const auto& f : incident) {
        if (f.branch == k) return &f;
    }
    return nullptr;
}

GridMeasurements::GridMeasurements(const Network& net, const Conditions& cond, const OperatingPoint& point)
    : net_(net), cond_(cond), point_(point) {}

double GridMeasurements::reactive_load(BusId bus) const { return cond_.q_load.at(net_.index_of(bus)); }

double GridMeasurements::pv_output(BusId bus) const {
    auto k = net_.inverter_at(bus);
    return k ? cond_.pv_p.at(*k) : 0.0;
}

std::vector<BranchId> GridMeasurements::incident_branches(BusId bus) const { return net_.incident_branches(bus); }

IncidentFlow GridMeasurements::flow_into(BusId bus, BranchId branch) const {
    return {branch, -point_.p_out_of(net_, branch, bus), -point_.q_out_of(net_, branch, bus)};
}

LocalView observe(const MeasurementSource& source, BusId bus) {
    LocalView view;
    view.bus = bus;
    view.q_load = source.reactive_load(bus);
    view.p_now = source.pv_output(bus);
    for (auto k : source.incident_branches(bus)) view.incident.push_back(source.flow_into(bus, k));
    return view;
}

const char* to_string(Stage s) {
    switch (s) {
        case Stage::idle: return "idle";
        case Stage::llma_done: return "H";
        case Stage::increased: return "I";
        case Stage::final_stage: return "F";
    }
    return "?";
}

double llma_setpoint(const LocalView& view, const CapabilityEnvelope& env) {
    if (view.q_load < 0.0) return std::max(view.q_load, env.q_min);
    return std::min(view.q_load, env.q_max);
}

UpstreamGuess detect_upstream(const LocalView& no_action_view) {
    UpstreamGuess guess;
    if (no_action_view.incident.empty()) return guess;
    guess.leaf = no_action_view.incident.size() == 1;
    double best = -1.0;
    for (const auto& f : no_action_view.incident) {
        const double s = std::hypot(f.p_in, f.q_in);
        if (s > best || (s == best && guess.branch && f.branch < *guess.branch)) {
            best = s;
            guess.branch = f.branch;
        }
    }
    return guess;
}

double lfma_step3(const LocalView& view, const CapabilityEnvelope& env, double q_up_H) {
    return clamp_q(env, view.q_load + std::max(q_up_H, 0.0));
}

bool reversed(double before, double after, double dead_zone) {
    return std::abs(before) > dead_zone && std::abs(after) > dead_zone && (before > 0.0) != (after > 0.0);
}

double lfma_step4(const LocalView& view_I, const AgentState& state, const CapabilityEnvelope& env) {
    if (!state.upstream_branch || state.leaf) return state.q_setpoint;
    const auto* up = view_I.flow_on(*state.upstream_branch);
    if (up == nullptr || !reversed(state.memo_q_up_H, up->q_in)) return state.q_setpoint;

    for (const auto& before : state.memo_flows_H) {
        if (before.branch == *state.upstream_branch) continue;
        const auto* after = view_I.flow_on(before.branch);
        if (after != nullptr && reversed(before.q_in, after->q_in)) return llma_setpoint(view_I, env);
    }
    return clamp_q(env, state.q_setpoint - std::abs(up->q_in));
}

namespace {

double upstream_inflow(const LocalView& view, const std::optional<BranchId>& upstream) {
    if (!upstream) return 0.0;
    const auto* f = view.flow_on(*upstream);
    return f ? f->q_in : 0.0;
}

}  // namespace

ControlOutcome run_local(const Network& net, const Conditions& cond, Algorithm algo, const LocalOptions& opt) {
    if (algo != Algorithm::no_action && algo != Algorithm::llma && algo != Algorithm::lfma) {
        throw ValidationError("run_local accepts only no-action, LLMA or LFMA");
    }
    const auto m = net.inverters.size();
    ControlOutcome out;
    out.algorithm = algo;
    out.q.assign(m, 0.0);

    std::vector<AgentState> agents(m);
    std::vector<CapabilityEnvelope> env(m);
    for (std::size_t k = 0; k < m; ++k) env[k] = envelope(net.inverters[k], cond.pv_p.at(k));

    auto solve_now = [&] { return solve(net, injections(net, cond, out.q), opt.solver); };
    auto views_at = [&](const OperatingPoint& point) {
        GridMeasurements meter(net, cond, point);
        std::unique_ptr<MeasurementSource> wrapped;
        if (opt.wrap_meter) wrapped = opt.wrap_meter(meter);
        const MeasurementSource& source = wrapped ? *wrapped : meter;
        std::vector<LocalView> views;
        views.reserve(m);
        for (const auto& inv : net.inverters) views.push_back(observe(source, inv.bus));
        return views;
    };
    auto record = [&](int round, const std::vector<LocalView>& views) {
        if (!opt.record_trace) return;
        for (std::size_t k = 0; k < m; ++k) {
            out.trace.push_back({round, net.inverters[k].bus, to_string(agents[k].stage), out.q[k],
                                 agents[k].upstream_branch, upstream_inflow(views[k], agents[k].upstream_branch)});
        }
    };

    // Round 0: no-action, and step 1 (orientation from the largest no-action flow).
    OperatingPoint point = solve_now();
    if (algo == Algorithm::no_action || m == 0) {
        out.point = std::move(point);
        return out;
    }
    auto views = views_at(point);
    if (algo == Algorithm::lfma) {
        for (std::size_t k = 0; k < m; ++k) {
            auto guess = detect_upstream(views[k]);
            agents[k].upstream_branch = guess.branch;
            agents[k].leaf = guess.leaf;
        }
    }
    record(0, views);

    // Round 1: LLMA setpoints everywhere (LFMA step 2).
    for (std::size_t k = 0; k < m; ++k) {
        out.q[k] = llma_setpoint(views[k], env[k]);
        agents[k].q_setpoint = out.q[k];
        agents[k].stage = Stage::llma_done;
    }
    point = solve_now();
    views = views_at(point);
    record(1, views);
    if (algo == Algorithm::llma) {
        out.point = std::move(point);
        return out;
    }

    // Round 2: branch nodes add their upstream inflow.
    for (std::size_t k = 0; k < m; ++k) {
        auto& a = agents[k];
        a.memo_flows_H = views[k].incident;
        a.memo_q_up_H = upstream_inflow(views[k], a.upstream_branch);
        if (a.leaf || !a.upstream_branch) continue;
        out.q[k] = lfma_step3(views[k], env[k], a.memo_q_up_H);
        a.q_setpoint = out.q[k];
        a.stage = Stage::increased;
    }
    point = solve_now();
    views = views_at(point);
    record(2, views);

    // Round 3: correction where the upstream flow reversed.
    for (std::size_t k = 0; k < m; ++k) {
        auto& a = agents[k];
        if (a.stage != Stage::increased) continue;
        out.q[k] = lfma_step4(views[k], a, env[k]);
        a.q_setpoint = out.q[k];
        a.stage = Stage::final_stage;
    }
    point = solve_now();
    views = views_at(point);
    record(3, views);
    out.point = std::move(point);
    return out;
}

ControlOutcome run_local(const Network& net, Algorithm algo, const LocalOptions& opt) {
    return run_local(net, base_conditions(net), algo, opt);
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
    out << "round,bus,stage,q_setpoint,upstream_branch,upstream_q\n";
    for (const auto& r : rows) {
        out << r.round << ',' << r.bus << ',' << r.stage << ',' << csv::num(r.q_setpoint) << ',';
        if (r.upstream_branch) out << *r.upstream_branch;
        out << ',' << csv::num(r.upstream_q) << '\n';
    }
}

}  // namespace qloss
