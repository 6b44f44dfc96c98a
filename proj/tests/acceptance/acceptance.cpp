// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/ringbuffer_sink.h>
#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "qloss/capability.hpp"
#include "qloss/case_io.hpp"
#include "qloss/central_opt.hpp"
#include "qloss/errors.hpp"
#include "qloss/generator.hpp"
#include "qloss/local_control.hpp"
#include "qloss/power_flow.hpp"
#include "qloss/random.hpp"
#include "qloss/timeseries.hpp"

using namespace qloss;
namespace fs = std::filesystem;

namespace {

constexpr double kSlack = 1e-9;

struct Verdict {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Verdict& v) {
    std::cout << "AC" << id << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << title << "  [" << v.detail << "]"
              << std::endl;
    if (!v.pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Network data_case(const char* name) { return load_case(fs::path(QLOSS_DATA_DIR) / "cases" / name); }

double total_p_load(const Network& net) {
    double s = 0.0;
    for (const auto& l : net.loads) s += l.p_load;
    return s;
}

// Random feeder with PVs: total capacity 0.75 of the active load, one PV per
// three load-side buses.
Network random_feeder(std::uint64_t seed, int n_min, int n_max) {
    Rng rng(derive_seed(seed, 0));
    RadialOptions ro;
    ro.n_buses = n_min + static_cast<int>(rng.index(static_cast<std::uint64_t>(n_max - n_min + 1)));
    auto base = synthetic_radial(ro, derive_seed(seed, 1));
    PlacementPolicy pol;
    pol.n_pvs = std::max(1, (ro.n_buses - 1) / 3);
    pol.total_capacity = 0.75 * total_p_load(base);
    return place_pvs(base, pol, derive_seed(seed, 2));
}

bool within_limits(const Network& net, const OperatingPoint& p) {
    return p.v_min() >= net.v_limits[0] && p.v_max() <= net.v_limits[1];
}

// `count` feeders whose no-action state is within voltage limits.
std::vector<Network> feasible_ensemble(std::uint64_t seed, std::size_t count, int n_min, int n_max) {
    std::vector<Network> nets;
    for (std::uint64_t i = 0; nets.size() < count; ++i) {
        auto net = random_feeder(derive_seed(seed, i), n_min, n_max);
        try {
            if (within_limits(net, run_local(net, Algorithm::no_action).point)) nets.push_back(std::move(net));
        } catch (const ConvergenceError&) {
        }
    }
    return nets;
}

Verdict ac1() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_v = 0.0, worst_loss = 0.0;
    for (std::uint64_t i = 0; i < 50; ++i) {
        const auto net = random_feeder(derive_seed(101, i), 5, 150);
        const auto cond = base_conditions(net);
        // Setpoints spread across each envelope so both directions of flow occur.
        Rng rng(derive_seed(102, i));
        std::vector<double> q(net.inverters.size());
        for (std::size_t k = 0; k < q.size(); ++k) {
            const auto env = envelope(net.inverters[k]);
            q[k] = rng.uniform(env.q_min, env.q_max);
        }
        const auto inj = injections(net, cond, q);
        const auto a = solve_radial(net, inj);
        const auto b = solve_meshed(net, inj);
        for (std::size_t j = 0; j < a.v.size(); ++j) worst_v = std::max(worst_v, std::abs(a.v[j] - b.v[j]));
        worst_loss = std::max(worst_loss, std::abs(a.total_loss - b.total_loss));
    }
    const double t = seconds_since(t0);
    return {worst_v <= 1e-6 && worst_loss <= 1e-8 && t < 10.0,
            fmt::format("50 nets, max |dV| {:.2e} (<=1e-6), max |dloss| {:.2e} (<=1e-8), {:.2f} s (<10 s)", worst_v,
                        worst_loss, t)};
}

Verdict ac2() {
    const auto net = data_case("five_bus.json");
    const auto llma = run_local(net, Algorithm::llma);
    const double expect_kvar[] = {7.00, 4.00, 2.40};
    bool exact = net.inverters.size() == 3 && !net.inverter_at(5).has_value();
    std::string got;
    for (std::size_t k = 0; k < 3 && exact; ++k) {
        const double kvar = llma.q[k] * net.base_mva * 1000.0;
        got += fmt::format("{}{:.2f}", k ? "/" : "", kvar);
        exact = exact && fmt::format("{:.2f}", kvar) == fmt::format("{:.2f}", expect_kvar[k]) &&
                std::abs(kvar - expect_kvar[k]) <= 1e-12;
    }

    LocalOptions opt;
    opt.record_trace = true;
    const auto lfma = run_local(net, Algorithm::lfma, opt);
    auto row = [&](int round, BusId bus) -> const TraceRow& {
        for (const auto& r : lfma.trace) {
            if (r.round == round && r.bus == bus) return r;
        }
        throw std::runtime_error("trace row missing");
    };
    // Bus i is the branch node whose upstream flow reverses after step 3.
    std::vector<BusId> reversed_at, corrected_at;
    for (const auto& inv : net.inverters) {
        if (reversed(row(1, inv.bus).upstream_q, row(2, inv.bus).upstream_q)) reversed_at.push_back(inv.bus);
        if (row(3, inv.bus).q_setpoint != row(2, inv.bus).q_setpoint) corrected_at.push_back(inv.bus);
    }
    const bool structure = reversed_at == std::vector<BusId>{2} && corrected_at == std::vector<BusId>{2};
    return {exact && structure,
            fmt::format("LLMA {} kVAr (exact 7.00/4.00/2.40, bus 5 none); reversal at bus {}; step-4 correction at "
                        "{} bus(es), bus {}",
                        got, reversed_at.empty() ? 0 : reversed_at.front(), corrected_at.size(),
                        corrected_at.empty() ? 0 : corrected_at.front())};
}

struct VoltageTally {
    std::size_t vmin_violations = 0, vmax_violations = 0, vmax_backfeed = 0;
    double worst_vmax_excess = 0.0;
    // Ensemble-wide extremes, reported alongside the per-network check.
    double na_vmax = 0.0, algo_vmax = 0.0;
};

Verdict ac3_and_collect(const std::vector<Network>& nets, double t_build, VoltageTally& vt) {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t violations = 0;
    for (const auto& net : nets) {
        const auto cond = base_conditions(net);
        const auto na = run_local(net, cond, Algorithm::no_action);
        const auto ll = run_local(net, cond, Algorithm::llma);
        const auto lf = run_local(net, cond, Algorithm::lfma);
        if (ll.loss() > na.loss() + kSlack || lf.loss() > ll.loss() + kSlack) ++violations;

        bool backfeed = false;
        for (std::size_t k = 0; k < net.inverters.size(); ++k) {
            const auto idx = net.index_of(net.inverters[k].bus);
            backfeed = backfeed || cond.pv_p[k] > cond.p_load[idx];
        }
        const double vmax_cap = std::max(na.point.v_max(), net.slack_voltage) + kSlack;
        vt.na_vmax = std::max({vt.na_vmax, na.point.v_max(), net.slack_voltage});
        vt.algo_vmax = std::max({vt.algo_vmax, ll.point.v_max(), lf.point.v_max()});
        for (const auto* out : {&ll, &lf}) {
            if (out->point.v_min() < na.point.v_min() - kSlack) ++vt.vmin_violations;
            if (out->point.v_max() > vmax_cap) {
                ++vt.vmax_violations;
                if (backfeed) ++vt.vmax_backfeed;
                vt.worst_vmax_excess = std::max(vt.worst_vmax_excess, out->point.v_max() - vmax_cap + kSlack);
            }
        }
    }
    const double t = t_build + seconds_since(t0);
    return {violations == 0 && t < 120.0,
            fmt::format("{} nets, {} ordering violations (slack 1e-9), {:.1f} s (<120 s)", nets.size(), violations, t)};
}

Verdict ac4_ac5(Verdict& five) {
    const auto nets = feasible_ensemble(401, 100, 10, 100);
    std::size_t chain = 0, mismatch = 0;
    double worst_all = 0.0, n_ll = 0.0, n_lf = 0.0, n_inv = 0.0;
    for (const auto& net : nets) {
        const auto cond = base_conditions(net);
        const auto opf = run_central(net, cond);
        const auto m = net.inverters.size();
        for (auto base : {Algorithm::llma, Algorithm::lfma}) {
            const auto local = run_local(net, cond, base);
            double prev = local.loss();
            for (std::size_t n : {std::size_t{0}, m / 4, m / 2, m}) {
                const auto h = run_hybrid(net, cond, local, n);
                if (h.loss() > prev + kSlack || h.loss() > local.loss() + kSlack || h.loss() < opf.loss() - kSlack)
                    ++chain;
                prev = h.loss();
                if (n == m) {
                    const double d = std::abs(h.loss() - opf.loss());
                    worst_all = std::max(worst_all, d);
                    if (d > 1e-7) ++mismatch;
                }
            }
            const auto mc = min_controllers(net, cond, local, opf.loss(), 1e-4);
            (base == Algorithm::llma ? n_ll : n_lf) += static_cast<double>(mc.n);
        }
        n_inv += static_cast<double>(m);
    }
    const double c = static_cast<double>(nets.size());
    n_ll /= c;
    n_lf /= c;
    n_inv /= c;
    five = {n_lf <= n_ll && n_ll <= n_inv,
            fmt::format("mean n: hybrid-LFMA {:.2f} <= hybrid-LLMA {:.2f} <= inverters {:.2f} (rel_gap 1e-4)", n_lf,
                        n_ll, n_inv)};
    return {chain == 0 && mismatch == 0,
            fmt::format("{} nets, n in {{0,1/4,1/2,all}}: {} chain violations (slack 1e-9), max |hybrid_all - OPF| "
                        "{:.2e} (<=1e-7)",
                        nets.size(), chain, worst_all)};
}

Verdict ac6(const VoltageTally& vt, std::size_t nets) {
    const auto net = data_case("ltc_feeder.json");
    bool ltc_ok = true;
    std::string ltc_detail;
    for (auto algo : {Algorithm::no_action, Algorithm::llma, Algorithm::lfma}) {
        const auto out = run_local(net, algo);
        const auto res = apply_ltc(net, injections(net, base_conditions(net), out.q));
        const bool in = !res.limit_reached && res.point.v_min() >= 0.90 && res.point.v_max() <= 1.10;
        ltc_ok = ltc_ok && in;
        ltc_detail += fmt::format("{}{}: {:.3f}->{:.3f} in {} moves", ltc_detail.empty() ? "" : ", ",
                                  to_string(algo), out.point.v_max(), res.point.v_max(), res.tap_moves);
    }
    const bool pass = vt.vmin_violations == 0 && vt.vmax_violations == 0 && ltc_ok;
    return {pass, fmt::format("{} nets x {{LLMA,LFMA}}: v_min drops {}, v_max rises {} (with PV above local load: "
                              "{}), worst excess {:.2e}; ensemble max {:.4f} vs no-action {:.4f}; LTC {}",
                              nets, vt.vmin_violations, vt.vmax_violations, vt.vmax_backfeed, vt.worst_vmax_excess,
                              vt.algo_vmax, vt.na_vmax, ltc_detail)};
}

Verdict ac7() {
    Rng rng(701);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double p = i == 0 ? 0.0 : rng.uniform();
        const InverterSpec spec{1, 1.0, 1.0, 0.8, p};
        const auto env = envelope(spec, p);
        worst = std::max(worst, std::abs(env.q_max - std::min(0.75 * p, std::sqrt(1.0 - p * p))));
    }
    const double at_rating = envelope(InverterSpec{1, 1.0, 1.0, 0.8, 1.0}).q_max;
    return {worst <= 1e-12 && at_rating == 0.0,
            fmt::format("1000 samples, max error {:.2e} (<=1e-12); q_max(p=s) = {}", worst, at_rating)};
}

Verdict ac8() {
    oracle::Gen gen(801);
    double worst_q = 0.0, worst_loss = 0.0;
    for (int c = 0; c < 20; ++c) {
        const auto net = gen.radial(gen.integer(2, 15), gen.integer(1, 4));
        const auto cond = base_conditions(net);
        const auto m = net.inverters.size();
        const auto k = static_cast<std::size_t>(gen.integer(0, static_cast<int>(m) - 1));
        // Free inverter k; the others stay at random points of their envelopes.
        std::vector<double> q(m, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            const auto env = envelope(net.inverters[j]);
            if (j != k) q[j] = gen.uniform(env.q_min, env.q_max);
        }
        const std::size_t control[] = {k};
        const auto res = solve_opf(net, make_opf_problem(net, cond, q, control));
        const auto env = envelope(net.inverters[k]);
        const auto [q_ref, l_ref] = oracle::scan_minimize(
            [&](double x) {
                auto qq = q;
                qq[k] = x;
                return solve(net, injections(net, cond, qq), OpfOptions{}.solver).total_loss;
            },
            env.q_min, env.q_max, 10000);
        worst_q = std::max(worst_q, std::abs(res.q[k] - q_ref));
        worst_loss = std::max(worst_loss, std::abs(res.point.total_loss - l_ref));
    }
    return {worst_q <= 1e-5 && worst_loss <= 1e-9,
            fmt::format("20 cases, max |dq| {:.2e} (<=1e-5), max |dloss| {:.2e} (<=1e-9)", worst_q, worst_loss)};
}

Verdict ac9() {
    RadialOptions ro;
    ro.n_buses = 25;
    PlacementPolicy pol;
    pol.n_pvs = 8;
    auto base = synthetic_radial(ro, 901);
    pol.total_capacity = 0.75 * total_p_load(base);
    const auto net = place_pvs(base, pol, 902);
    const auto week = synthetic_week(net, 903);

    TimeSeriesOptions local_only;
    local_only.algos = {Algorithm::no_action, Algorithm::llma, Algorithm::lfma};
    const auto rep = run_timeseries(net, week, local_only);
    const std::size_t bad = rep.totals[1].infeasible_steps + rep.totals[2].infeasible_steps;

    auto sink = std::make_shared<spdlog::sinks::ringbuffer_sink_mt>(4096);
    auto previous = spdlog::default_logger();
    spdlog::set_default_logger(std::make_shared<spdlog::logger>("acceptance", sink));
    TimeSeriesOptions faulty;
    faulty.algos = {Algorithm::hybrid_llma, Algorithm::hybrid_lfma};
    faulty.n_central = 3;
    faulty.fault = [](std::size_t k) { return k % 48 == 5; };
    const auto f = run_timeseries(net, week, faulty);
    spdlog::set_default_logger(previous);

    std::size_t faulted = 0, engaged = 0, logged = 0, spurious = 0;
    for (std::size_t k = 0; k < week.size(); ++k) faulted += faulty.fault(k) ? 2 : 0;
    for (const auto& r : f.rows) {
        const bool fb = r.status == StepStatus::fallback;
        if (fb && faulty.fault(r.step)) ++engaged;
        if (fb != faulty.fault(r.step)) ++spurious;
    }
    for (const auto& line : sink->last_formatted()) {
        if (line.find("central stage failed; using previous-step") != std::string::npos) ++logged;
    }
    return {rep.steps == 2016 && bad == 0 && engaged == faulted && logged == faulted && spurious == 0,
            fmt::format("{} steps ({} skipped): LLMA/LFMA infeasible {}; forced failures {}, fallbacks {}, logged {}, "
                        "unexpected {}",
                        rep.steps, rep.skipped_steps, bad, faulted, engaged, logged, spurious)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Verdict ac10() {
    const fs::path root = fs::temp_directory_path() / "qloss_acceptance";
    fs::remove_all(root);
    const std::string cli = QLOSS_CLI;
    const std::string five = (fs::path(QLOSS_DATA_DIR) / "cases" / "five_bus.json").string();
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"ensemble", "--seed 7 ensemble --reps 2"},
        {"reconfig", "--seed 7 reconfig --reps 2 --buses 40 --pvs 10"},
        {"timeseries", "--seed 7 --case " + five + " timeseries --steps 288 --price 60 --fault-every 50"},
    };
    std::size_t files = 0, differing = 0, failed = 0;
    for (const auto& [name, args] : commands) {
        for (int run : {1, 2}) {
            const auto dir = root / (name + std::to_string(run));
            const auto cmd = cli + " --out " + dir.string() + " " + args + " > /dev/null 2>&1";
            if (std::system(cmd.c_str()) != 0) ++failed;
        }
        for (const auto& e : fs::recursive_directory_iterator(root / (name + "1"))) {
            if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
            ++files;
            const auto twin = root / (name + "2") / fs::relative(e.path(), root / (name + "1"));
            if (!fs::exists(twin) || slurp(e.path()) != slurp(twin)) ++differing;
        }
    }
    fs::remove_all(root);
    return {failed == 0 && files > 0 && differing == 0,
            fmt::format("ensemble/reconfig/timeseries twice: {} CSV files compared, {} differ, {} runs failed", files,
                        differing, failed)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    report(1, "radial sweep vs Newton-Raphson", ac1());
    report(2, "5-bus setpoints and LFMA trace", ac2());

    const auto t0 = std::chrono::steady_clock::now();
    const auto ordering_nets = feasible_ensemble(301, 500, 5, 150);
    VoltageTally vt;
    report(3, "loss ordering LFMA <= LLMA <= no-action", ac3_and_collect(ordering_nets, seconds_since(t0), vt));

    Verdict five;
    report(4, "dominance chain OPF <= hybrid <= local", ac4_ac5(five));
    report(5, "fewer central controllers", five);
    report(6, "voltage containment and LTC", ac6(vt, ordering_nets.size()));
    report(7, "capability envelope", ac7());
    report(8, "single-inverter OPF vs brute-force scan", ac8());
    report(9, "time-series robustness and fallback", ac9());
    report(10, "byte-identical CSV across runs", ac10());

    std::cout << (failures == 0 ? "ALL PASS" : fmt::format("{} criterion(s) FAILED", failures)) << std::endl;
    return failures == 0 ? 0 : 1;
}
