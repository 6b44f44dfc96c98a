#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "qloss/case_io.hpp"
#include "qloss/errors.hpp"
#include "qloss/local_control.hpp"

using namespace qloss;

namespace {

Network five_bus() { return load_case(std::string(QLOSS_DATA_DIR) + "/cases/five_bus.json"); }

CapabilityEnvelope wide(double q = 1.0) { return {q, -q, 1.0}; }

LocalView view_with(double q_load, std::vector<IncidentFlow> flows = {}) {
    LocalView v;
    v.bus = 7;
    v.q_load = q_load;
    v.incident = std::move(flows);
    return v;
}

// Wraps a source and records every probe that is not local to the agent it describes.
class AuditingSource final : public MeasurementSource {
  public:
    AuditingSource(const MeasurementSource& inner, const Network& net, std::vector<std::string>& breaches, int& reads)
        : inner_(inner), net_(net), breaches_(breaches), reads_(reads) {}

    double reactive_load(BusId bus) const override {
        check_agent(bus, "reactive_load");
        return inner_.reactive_load(bus);
    }
    double pv_output(BusId bus) const override {
        check_agent(bus, "pv_output");
        return inner_.pv_output(bus);
    }
    std::vector<BranchId> incident_branches(BusId bus) const override {
        check_agent(bus, "incident_branches");
        return inner_.incident_branches(bus);
    }
    IncidentFlow flow_into(BusId bus, BranchId branch) const override {
        check_agent(bus, "flow_into");
        const auto& br = net_.branches.at(branch);
        if (br.from_bus != bus && br.to_bus != bus) {
            breaches_.push_back("flow on non-incident branch " + std::to_string(branch) + " read at bus " +
                                std::to_string(bus));
        }
        return inner_.flow_into(bus, branch);
    }

  private:
    void check_agent(BusId bus, const char* what) const {
        ++reads_;
        if (!net_.inverter_at(bus)) breaches_.push_back(std::string(what) + " at non-agent bus " + std::to_string(bus));
    }
    const MeasurementSource& inner_;
    const Network& net_;
    std::vector<std::string>& breaches_;
    int& reads_;
};

}  // namespace

TEST_CASE("LLMA on the five-bus system matches the tabulated setpoints") {
    const auto net = five_bus();
    const auto out = run_local(net, Algorithm::llma, {});
    REQUIRE(out.q.size() == 3);
    CHECK(out.q[0] == 0.07);
    CHECK(out.q[1] == 0.04);
    CHECK(out.q[2] == envelope(net.inverters[2]).q_max);
    const double kvar = net.base_mva * 1000.0;
    CHECK(out.q[0] * kvar == doctest::Approx(7.00).epsilon(1e-12));
    CHECK(out.q[1] * kvar == doctest::Approx(4.00).epsilon(1e-12));
    CHECK(out.q[2] * kvar == doctest::Approx(2.40).epsilon(1e-12));
    CHECK(out.n_central == 0);
}

TEST_CASE("llma_setpoint") {
    CHECK(llma_setpoint(view_with(0.07), {0.09, -0.09, 0.12}) == 0.07);
    CHECK(llma_setpoint(view_with(0.03), {0.024, -0.024, 0.032}) == 0.024);
    CHECK(llma_setpoint(view_with(0.0), wide()) == 0.0);
    SUBCASE("capacitive load is absorbed up to the envelope") {
        CHECK(llma_setpoint(view_with(-0.02), {0.05, -0.05, 0.1}) == -0.02);
        CHECK(llma_setpoint(view_with(-0.2), {0.05, -0.05, 0.1}) == -0.05);
    }
}

TEST_CASE("upstream detection on the five-bus system") {
    const auto net = five_bus();
    const auto cond = base_conditions(net);
    const auto pt = solve(net, injections(net, cond));
    GridMeasurements meter(net, cond, pt);
    const auto b2 = detect_upstream(observe(meter, 2));
    const auto b3 = detect_upstream(observe(meter, 3));
    const auto b4 = detect_upstream(observe(meter, 4));
    CHECK(b2.branch == net.find_branch(1, 2));
    CHECK_FALSE(b2.leaf);
    CHECK(b3.branch == net.find_branch(2, 3));
    CHECK_FALSE(b3.leaf);
    CHECK(b4.leaf);
}

TEST_CASE("upstream ties break toward the lowest branch id") {
    const auto v = view_with(0.0, {{5, 0.3, 0.4}, {2, 0.4, 0.3}, {9, 0.1, 0.1}});
    CHECK(detect_upstream(v).branch == BranchId{2});
}

TEST_CASE("step 3 adds the upstream inflow") {
    CHECK(lfma_step3(view_with(7.0), wide(100.0), 0.61) == doctest::Approx(7.61));
    CHECK(lfma_step3(view_with(0.07), wide(), 0.0) == llma_setpoint(view_with(0.07), wide()));
    CHECK(lfma_step3(view_with(0.07), wide(0.075), 0.02) == 0.075);
    CHECK(lfma_step3(view_with(0.07), wide(), -0.02) == 0.07);
}

TEST_CASE("step 4 correction") {
    AgentState st;
    st.upstream_branch = 0;
    st.q_setpoint = 0.086;
    st.stage = Stage::increased;
    st.memo_q_up_H = 0.016;
    st.memo_flows_H = {{0, 0.1, 0.016}, {1, -0.06, -0.006}, {2, -0.02, -0.01}};
    const auto env = wide(0.09);

    SUBCASE("upstream reversed, downstream kept direction") {
        const auto v = view_with(0.07, {{0, 0.1, -0.006}, {1, -0.06, -0.0005}, {2, -0.02, -0.01}});
        CHECK(lfma_step4(v, st, env) == doctest::Approx(0.080));
    }
    SUBCASE("no reversal leaves the step-3 value") {
        const auto v = view_with(0.07, {{0, 0.1, 0.004}, {1, -0.06, -0.0005}, {2, -0.02, -0.01}});
        CHECK(lfma_step4(v, st, env) == 0.086);
    }
    SUBCASE("downstream reversal falls back to LLMA") {
        const auto v = view_with(0.07, {{0, 0.1, -0.006}, {1, -0.06, 0.002}, {2, -0.02, -0.01}});
        CHECK(lfma_step4(v, st, env) == 0.07);
    }
    SUBCASE("flows inside the dead zone are not reversals") {
        const auto v = view_with(0.07, {{0, 0.1, -5e-8}, {1, -0.06, -0.0005}, {2, -0.02, -0.01}});
        CHECK(lfma_step4(v, st, env) == 0.086);
    }
}

TEST_CASE("five-bus LFMA walk-through") {
    const auto net = five_bus();
    LocalOptions opt;
    opt.record_trace = true;
    const auto out = run_local(net, Algorithm::lfma, opt);
    auto row = [&](int round, BusId bus) {
        for (const auto& r : out.trace) {
            if (r.round == round && r.bus == bus) return r;
        }
        FAIL("missing trace row");
        return TraceRow{};
    };
    const auto llma = run_local(net, Algorithm::llma, {});
    for (std::size_t k = 0; k < 3; ++k) CHECK(row(1, net.inverters[k].bus).q_setpoint == llma.q[k]);

    // Bus 2's upstream inflow changes sign across step 3; bus 3's does not leave the dead zone.
    CHECK(reversed(row(1, 2).upstream_q, row(2, 2).upstream_q));
    CHECK_FALSE(reversed(row(1, 3).upstream_q, row(2, 3).upstream_q));

    // Step 4 is performed by bus 2 only.
    CHECK(row(3, 2).q_setpoint < row(2, 2).q_setpoint);
    CHECK(row(3, 3).q_setpoint == row(2, 3).q_setpoint);
    CHECK(row(3, 4).q_setpoint == row(2, 4).q_setpoint);
    CHECK(row(3, 2).q_setpoint == doctest::Approx(row(2, 2).q_setpoint - std::abs(row(2, 2).upstream_q)));

    // The leaf keeps its LLMA setpoint throughout.
    CHECK(out.q[2] == llma.q[2]);
    CHECK(out.loss() < llma.loss());

    std::ostringstream csv;
    write_trace_csv(csv, out.trace);
    CHECK(csv.str().rfind("round,bus,stage,q_setpoint,upstream_branch,upstream_q\n", 0) == 0);
}

TEST_CASE("no inverters reduces to no-action") {
    auto net = five_bus();
    net.inverters.clear();
    const auto none = run_local(net, Algorithm::no_action, {});
    for (auto a : {Algorithm::llma, Algorithm::lfma}) {
        const auto out = run_local(net, a, {});
        CHECK(out.q.empty());
        CHECK(out.loss() == none.loss());
    }
}

TEST_CASE("only local algorithms are accepted") {
    CHECK_THROWS_AS(run_local(five_bus(), Algorithm::opf, {}), ValidationError);
}

TEST_CASE("model-freeness: agents only probe their own bus and incident branches") {
    oracle::Gen gen(21);
    for (int trial = 0; trial < 30; ++trial) {
        const auto net = gen.radial(gen.integer(3, 50), gen.integer(1, 10));
        std::vector<std::string> breaches;
        int reads = 0;
        LocalOptions opt;
        opt.wrap_meter = [&](const MeasurementSource& inner) {
            return std::make_unique<AuditingSource>(inner, net, breaches, reads);
        };
        run_local(net, Algorithm::lfma, opt);
        run_local(net, Algorithm::llma, opt);
        CHECK(reads > 0);
        CHECK(breaches.empty());
    }
}

TEST_CASE("property: envelopes, LLMA agreement, leaves and loss ordering") {
    oracle::Gen gen(22);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto net = gen.radial(gen.integer(3, 60), gen.integer(1, 15));
        const auto none = run_local(net, Algorithm::no_action, {});
        LocalOptions opt;
        opt.record_trace = true;
        const auto llma = run_local(net, Algorithm::llma, {});
        const auto lfma = run_local(net, Algorithm::lfma, opt);
        for (std::size_t k = 0; k < net.inverters.size(); ++k) {
            const auto env = envelope(net.inverters[k]);
            for (const auto* o : {&llma, &lfma}) {
                CHECK(o->q[k] <= env.q_max);
                CHECK(o->q[k] >= env.q_min);
            }
        }
        for (const auto& r : lfma.trace) {
            if (r.round != 1) continue;
            CHECK(r.q_setpoint == llma.q[*net.inverter_at(r.bus)]);
        }
        for (std::size_t k = 0; k < net.inverters.size(); ++k) {
            if (net.incident_branches(net.inverters[k].bus).size() == 1) CHECK(lfma.q[k] == llma.q[k]);
        }
        if (none.point.v_min() < net.v_limits[0] || none.point.v_max() > net.v_limits[1]) continue;
        ++checked;
        CHECK(llma.loss() <= none.loss() + 1e-9);
        CHECK(lfma.loss() <= llma.loss() + 1e-9);
    }
    CHECK(checked > 100);
}

TEST_CASE("property: voltages move toward the slack when no bus back-feeds") {
    // With every bus a net consumer of active power, all flows point away from
    // the slack and reducing reactive flow can only shrink the voltage drops.
    oracle::Gen gen(23);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto net = gen.radial(gen.integer(3, 60), gen.integer(1, 15), 0.4);
        const auto cond = base_conditions(net);
        bool backfeed = false;
        for (std::size_t k = 0; k < net.inverters.size(); ++k) {
            backfeed |= cond.pv_p[k] > cond.p_load[net.index_of(net.inverters[k].bus)];
        }
        if (backfeed) continue;
        const auto none = run_local(net, Algorithm::no_action, {});
        if (none.point.v_min() < net.v_limits[0]) continue;
        ++checked;
        for (auto a : {Algorithm::llma, Algorithm::lfma}) {
            const auto out = run_local(net, a, {});
            CHECK(out.point.v_min() >= none.point.v_min() - 1e-9);
            CHECK(out.point.v_max() <= std::max(none.point.v_max(), net.slack_voltage) + 1e-9);
        }
    }
    CHECK(checked > 20);
}
