// Command-line front end: single solves, LFMA traces, placement ensembles,
// reconfiguration studies, time-series campaigns and controller-count searches.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "qloss/case_io.hpp"
#include "qloss/central_opt.hpp"
#include "qloss/csv.hpp"
#include "qloss/errors.hpp"
#include "qloss/experiment.hpp"
#include "qloss/generator.hpp"
#include "qloss/local_control.hpp"
#include "qloss/timeseries.hpp"

namespace fs = std::filesystem;
using namespace qloss;

namespace {

constexpr int exit_usage = 2;
constexpr int exit_numerical = 3;

struct Globals {
    std::string case_path;
    std::uint64_t seed = 1;
    std::vector<std::string> algos;
    std::optional<std::size_t> n_central;
    std::string out_dir;
    std::string format = "csv";
    double rel_gap = 1e-4;
    bool verbose = false;
};

struct UsageError : Error {
    using Error::Error;
};

std::vector<Algorithm> selected_algos(const Globals& g, std::vector<Algorithm> fallback) {
    if (g.algos.empty()) return fallback;
    std::vector<Algorithm> out;
    for (const auto& s : g.algos) {
        auto a = parse_algorithm(s);
        if (!a) throw UsageError("unknown algorithm '" + s + "'");
        out.push_back(*a);
    }
    return out;
}

Algorithm single_algo(const Globals& g, Algorithm fallback) {
    auto algos = selected_algos(g, {fallback});
    if (algos.size() != 1) throw UsageError("this command takes exactly one --algo");
    return algos.front();
}

Network require_case(const Globals& g) {
    if (g.case_path.empty()) throw UsageError("--case is required");
    return load_case(g.case_path);
}

// Writes through `write` to <out>/<name>, or to stdout when no --out was given.
template <class F>
void emit(const Globals& g, const std::string& name, F&& write) {
    if (g.out_dir.empty()) {
        write(std::cout);
        return;
    }
    fs::create_directories(g.out_dir);
    std::ofstream f(fs::path(g.out_dir) / name, std::ios::binary);
    if (!f) throw Error("cannot write " + (fs::path(g.out_dir) / name).string());
    write(f);
}

double kvar(const Network& net, double pu) { return pu * net.base_mva * 1000.0; }

const char* pv_share_help = "total PV capacity as a fraction of total active load";

struct EnsembleArgs {
    int buses = 141;
    std::uint64_t net_seed = 1;
    int pvs = 30;
    double pv_share = 0.75;
    std::optional<double> capacity;
    std::size_t reps = 100;
};

void add_ensemble_args(CLI::App* cmd, EnsembleArgs& a) {
    cmd->add_option("--buses", a.buses, "bus count of the synthetic feeder used when --case is absent")
        ->check(CLI::Range(2, 100000));
    cmd->add_option("--net-seed", a.net_seed, "seed of the synthetic feeder");
    cmd->add_option("--pvs", a.pvs, "PVs placed per repetition")->check(CLI::NonNegativeNumber);
    cmd->add_option("--pv-share", a.pv_share, pv_share_help)->check(CLI::NonNegativeNumber);
    cmd->add_option("--capacity", a.capacity, "total PV capacity in p.u. (overrides --pv-share)");
    cmd->add_option("--reps", a.reps, "repetitions")->check(CLI::PositiveNumber);
}

Network ensemble_network(const Globals& g, const EnsembleArgs& a) {
    if (!g.case_path.empty()) return load_case(g.case_path);
    auto opt = feeder141_options();
    if (a.buses != 141) {
        opt = RadialOptions{};
        opt.n_buses = a.buses;
        opt.n_ties = 3;
    }
    return synthetic_radial(opt, a.net_seed);
}

EnsembleOptions ensemble_options(const Globals& g, const EnsembleArgs& a, const Network& net) {
    EnsembleOptions opt;
    opt.algos = selected_algos(g, {std::begin(all_algorithms), std::end(all_algorithms)});
    opt.reps = a.reps;
    opt.seed = g.seed;
    opt.n_central = g.n_central;
    opt.rel_gap = g.rel_gap;
    opt.policy.n_pvs = a.pvs;
    double total_p = 0.0;
    for (const auto& l : net.loads) total_p += l.p_load;
    opt.policy.total_capacity = a.capacity ? *a.capacity : a.pv_share * total_p;
    return opt;
}

void print_summary(const ExperimentReport& rep) {
    std::cout << rep.label << ": " << rep.reps << " reps, " << rep.ordering_violations << " ordering violations\n";
    for (const auto& s : rep.stats) {
        std::cout << "  " << to_string(s.algo) << ": mean loss " << s.loss.mean << " p.u., std " << s.loss.std
                  << ", infeasible " << s.infeasible << ", mean central " << s.mean_central << "\n";
    }
}

void write_ensemble(const Globals& g, const ExperimentReport& rep, const std::string& prefix) {
    if (g.out_dir.empty()) {
        if (g.format == "json") {
            write_summary_json(std::cout, rep);
        } else {
            write_summary_csv(std::cout, rep);
        }
        return;
    }
    emit(g, prefix + "reps.csv", [&](std::ostream& o) { write_rep_csv(o, rep); });
    emit(g, prefix + "decrease.csv", [&](std::ostream& o) { write_decrease_csv(o, rep); });
    if (g.format == "json") {
        emit(g, prefix + "summary.json", [&](std::ostream& o) { write_summary_json(o, rep); });
    } else {
        emit(g, prefix + "summary.csv", [&](std::ostream& o) { write_summary_csv(o, rep); });
    }
    print_summary(rep);
}

int cmd_solve(const Globals& g, bool ltc) {
    const auto algo = single_algo(g, Algorithm::llma);
    const auto net = require_case(g);
    const auto cond = base_conditions(net);
    std::size_t n = 0;
    if (algo == Algorithm::hybrid_llma || algo == Algorithm::hybrid_lfma) {
        if (g.n_central) {
            n = *g.n_central;
        } else {
            const auto base = algo == Algorithm::hybrid_llma ? Algorithm::llma : Algorithm::lfma;
            n = min_controllers(net, cond, base, g.rel_gap).n;
        }
    }
    auto out = run_algorithm(net, cond, algo, n);
    OperatingPoint point = out.point;
    Network final_net = net;
    if (ltc && !net.tap_changers.empty()) {
        auto res = apply_ltc(net, injections(net, cond, out.q));
        point = res.point;
        final_net = res.net;
        std::cout << "ltc: " << res.tap_moves << " tap moves" << (res.limit_reached ? " (tap limit reached)" : "")
                  << "\n";
    }

    std::ostringstream setpoints;
    setpoints << "bus,q_pu,q_kvar\n";
    for (std::size_t k = 0; k < net.inverters.size(); ++k) {
        setpoints << net.inverters[k].bus << ',' << csv::num(out.q[k]) << ',' << csv::num(kvar(net, out.q[k]))
                  << '\n';
    }

    std::cout << "algorithm: " << to_string(algo) << "\n";
    for (std::size_t k = 0; k < net.inverters.size(); ++k) {
        std::cout << "  bus " << net.inverters[k].bus << ": q = " << out.q[k] << " p.u. ("
                  << fmt::format("{:.2f}", kvar(net, out.q[k])) << " kVAr)\n";
    }
    std::cout << "loss: " << point.total_loss << " p.u. (" << point.total_loss * net.base_mva * 1000.0 << " kW)\n"
              << "voltage: min " << point.v_min() << ", max " << point.v_max() << "\n"
              << "centrally controlled: " << out.n_central << (out.fallback ? " (fallback)" : "") << "\n";

    if (!g.out_dir.empty()) {
        if (g.format == "json") {
            nlohmann::json doc{{"algorithm", std::string(to_string(algo))},
                               {"loss", point.total_loss},
                               {"v_min", point.v_min()},
                               {"v_max", point.v_max()},
                               {"n_central", out.n_central},
                               {"fallback", out.fallback},
                               {"v", point.v},
                               {"q", out.q}};
            emit(g, "solve.json", [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
        } else {
            emit(g, "bus.csv", [&](std::ostream& o) { write_bus_csv(o, final_net, point); });
            emit(g, "branch.csv", [&](std::ostream& o) { write_branch_csv(o, final_net, point); });
            emit(g, "setpoints.csv", [&](std::ostream& o) { o << setpoints.str(); });
        }
    }
    return 0;
}

int cmd_trace(const Globals& g) {
    const auto algo = single_algo(g, Algorithm::lfma);
    const auto net = require_case(g);
    LocalOptions opt;
    opt.record_trace = true;
    auto out = run_local(net, algo, opt);
    emit(g, "trace.csv", [&](std::ostream& o) { write_trace_csv(o, out.trace); });
    return 0;
}

int cmd_ensemble(const Globals& g, const EnsembleArgs& a) {
    const auto net = ensemble_network(g, a);
    const auto rep = run_ensemble(net, ensemble_options(g, a, net));
    write_ensemble(g, rep, "");
    return 0;
}

std::pair<BranchId, BranchId> parse_swap(const std::string& s) {
    auto colon = s.find(':');
    if (colon == std::string::npos) throw UsageError("swap must be OFF:ON, got '" + s + "'");
    try {
        return {std::stoul(s.substr(0, colon)), std::stoul(s.substr(colon + 1))};
    } catch (const std::exception&) {
        throw UsageError("swap must be OFF:ON branch ids, got '" + s + "'");
    }
}

int cmd_reconfig(const Globals& g, const EnsembleArgs& a, const std::vector<std::string>& swap_args) {
    const auto net = ensemble_network(g, a);
    std::vector<std::pair<BranchId, BranchId>> swaps;
    for (const auto& s : swap_args) swaps.push_back(parse_swap(s));
    if (swaps.empty()) {
        // One swap per tie line: the loop branch nearest the middle of the loop.
        for (BranchId k = 0; k < net.branches.size(); ++k) {
            if (net.branches[k].in_service()) continue;
            auto loop = loop_swaps(net, k);
            if (!loop.empty()) swaps.push_back(loop[loop.size() / 2]);
        }
    }
    const auto entries = run_reconfig_study(net, swaps, ensemble_options(g, a, net));
    std::ostringstream index;
    index << "swap,off,on,valid,ordering_violations,error\n";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        index << i << ',' << e.off << ',' << e.on << ',' << (e.valid ? 1 : 0) << ','
              << (e.valid ? std::to_string(e.report.ordering_violations) : "") << ',' << e.error << '\n';
        if (e.valid && !g.out_dir.empty()) write_ensemble(g, e.report, "swap" + std::to_string(i) + "_");
    }
    emit(g, "swaps.csv", [&](std::ostream& o) { o << index.str(); });
    return 0;
}

int cmd_timeseries(const Globals& g, const std::string& series_dir, std::size_t week_steps,
                   std::optional<double> price, std::size_t fault_every) {
    const auto net = require_case(g);
    TimeSeries ts;
    if (!series_dir.empty()) {
        ts = read_timeseries(net, series_dir);
    } else {
        SyntheticWeekOptions w;
        w.steps = week_steps;
        ts = synthetic_week(net, g.seed, w);
    }
    TimeSeriesOptions opt;
    opt.algos = selected_algos(g, opt.algos);
    opt.n_central = g.n_central;
    opt.rel_gap = g.rel_gap;
    opt.price = price;
    if (fault_every > 0) opt.fault = [fault_every](std::size_t k) { return k % fault_every == 0; };
    const auto rep = run_timeseries(net, ts, opt);

    if (!g.out_dir.empty()) {
        emit(g, "steps.csv", [&](std::ostream& o) { write_step_csv(o, rep); });
        if (series_dir.empty()) write_timeseries(net, ts, fs::path(g.out_dir) / "series");
    }
    if (g.format == "json") {
        emit(g, "totals.json", [&](std::ostream& o) { write_totals_json(o, rep); });
    } else {
        emit(g, "totals.csv", [&](std::ostream& o) { write_totals_csv(o, rep); });
    }
    if (!g.out_dir.empty()) {
        std::cout << rep.steps << " steps, " << rep.skipped_steps << " skipped\n";
        for (const auto& t : rep.totals) {
            std::cout << "  " << to_string(t.algo) << ": " << t.energy_mwh << " MWh, savings " << t.savings_pct
                      << "%, infeasible " << t.infeasible_steps << ", fallback " << t.fallback_steps << "\n";
        }
    }
    return 0;
}

int cmd_mincontrollers(const Globals& g) {
    const auto algo = single_algo(g, Algorithm::hybrid_lfma);
    const auto net = require_case(g);
    Algorithm base = Algorithm::lfma;
    if (algo == Algorithm::hybrid_llma) {
        base = Algorithm::llma;
    } else if (algo != Algorithm::hybrid_lfma) {
        throw UsageError("mincontrollers needs --algo hybrid-llma or hybrid-lfma");
    }
    const auto res = min_controllers(net, base_conditions(net), base, g.rel_gap);
    if (g.format == "json") {
        nlohmann::json doc{{"algo", std::string(to_string(algo))},
                           {"n", res.n},
                           {"inverters", net.inverters.size()},
                           {"hybrid_loss", res.hybrid_loss},
                           {"opf_loss", res.opf_loss},
                           {"gap", res.gap}};
        emit(g, "mincontrollers.json", [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
    } else {
        emit(g, "mincontrollers.csv", [&](std::ostream& o) {
            o << "algo,n,inverters,hybrid_loss,opf_loss,gap\n"
              << to_string(algo) << ',' << res.n << ',' << net.inverters.size() << ',' << csv::num(res.hybrid_loss)
              << ',' << csv::num(res.opf_loss) << ',' << csv::num(res.gap) << '\n';
        });
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reactive-power control strategies for distribution-grid loss minimization"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--case", g.case_path, "case file (JSON)");
    app.add_option("--seed", g.seed, "base seed for stochastic commands");
    app.add_option("--algo", g.algos, "noaction, llma, lfma, hybrid-llma, hybrid-lfma, opf (comma separated)")
        ->delimiter(',');
    app.add_option("--n-central", g.n_central, "central controllers for the hybrids (default: minimum within --rel-gap)");
    app.add_option("--out", g.out_dir, "output directory (default: stdout)");
    app.add_option("--format", g.format, "output format")->check(CLI::IsMember({"csv", "json"}));
    app.add_option("--rel-gap", g.rel_gap, "relative loss gap to full OPF for the controller search")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("-v,--verbose", g.verbose, "debug logging");

    bool ltc = false;
    auto* solve = app.add_subcommand("solve", "solve one case under one algorithm")->fallthrough();
    solve->add_flag("--ltc", ltc, "run the tap-changer deadband controller on the result");
    auto* trace = app.add_subcommand("trace", "per-round local-agent trace (CSV)")->fallthrough();

    EnsembleArgs ens;
    auto* ensemble = app.add_subcommand("ensemble", "random PV placement ensemble")->fallthrough();
    add_ensemble_args(ensemble, ens);

    EnsembleArgs rec;
    std::vector<std::string> swaps;
    auto* reconfig = app.add_subcommand("reconfig", "ensembles under topology reconfigurations")->fallthrough();
    add_ensemble_args(reconfig, rec);
    reconfig->add_option("--swap", swaps, "OFF:ON branch ids (repeatable; default one per tie line)");

    std::string series_dir;
    std::size_t week_steps = 2016;
    std::optional<double> price;
    std::size_t fault_every = 0;
    auto* timeseries = app.add_subcommand("timeseries", "time-series campaign")->fallthrough();
    timeseries->add_option("--series", series_dir, "directory with p_load.csv, q_load.csv, pv_p.csv[, price.csv]");
    timeseries->add_option("--steps", week_steps, "length of the synthetic week when --series is absent");
    timeseries->add_option("--price", price, "flat price per MWh");
    timeseries->add_option("--fault-every", fault_every, "force the OPF stage to fail every N-th step (0 = never)");

    auto* mincontrollers = app.add_subcommand("mincontrollers", "smallest central-controller count")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);

    try {
        if (*solve) return cmd_solve(g, ltc);
        if (*trace) return cmd_trace(g);
        if (*ensemble) return cmd_ensemble(g, ens);
        if (*reconfig) return cmd_reconfig(g, rec, swaps);
        if (*timeseries) return cmd_timeseries(g, series_dir, week_steps, price, fault_every);
        if (*mincontrollers) return cmd_mincontrollers(g);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const ConvergenceError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    } catch (const OscillationError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_usage;
}
