#include "qloss/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "qloss/capability.hpp"
#include "qloss/csv.hpp"
#include "qloss/errors.hpp"
#include "qloss/experiment.hpp"
#include "qloss/random.hpp"

namespace qloss {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::optional<std::int64_t> parse_timestamp(const std::string& s) {
    if (!s.empty() && s.find_first_not_of("-0123456789") == std::string::npos) {
        try {
            std::size_t used = 0;
            auto v = std::stoll(s, &used);
            if (used == s.size()) return v;
        } catch (const std::exception&) {
        }
        return std::nullopt;
    }
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    char tail = 0;
    const int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &tail);
    const int n_short = n < 6 ? std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d%c", &y, &mo, &d, &h, &mi, &tail) : 0;
    const bool ok = (n == 6 || (n == 7 && tail == 'Z')) || (n < 6 && (n_short == 5 || (n_short == 6 && tail == 'Z')));
    if (!ok || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60) return std::nullopt;
    if (n < 6) sec = 0;
    return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 + mi * 60 + sec;
}

struct Table {
    std::vector<std::int64_t> timestamps;
    std::vector<BusId> columns;
    std::vector<std::vector<double>> values;  // [row][column]
};

Table read_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open file", 0, path.string());
    Table t;
    std::string line;
    std::size_t lineno = 0;
    const std::string file = path.filename().string();
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = csv::split(line);
        if (t.columns.empty() && lineno == 1) {
            if (fields.empty() || fields[0] != "timestamp") throw ParseError("first column must be 'timestamp'", 1, file);
            for (std::size_t c = 1; c < fields.size(); ++c) {
                try {
                    std::size_t used = 0;
                    t.columns.push_back(std::stoi(fields[c], &used));
                    if (used != fields[c].size()) throw std::invalid_argument("junk");
                } catch (const std::exception&) {
                    throw ParseError("column header is not a bus id: '" + fields[c] + "'", 1, file);
                }
            }
            continue;
        }
        if (fields.size() != t.columns.size() + 1) {
            throw ParseError("expected " + std::to_string(t.columns.size() + 1) + " fields, found " +
                                 std::to_string(fields.size()),
                             lineno, file);
        }
        auto ts = parse_timestamp(fields[0]);
        if (!ts) throw ParseError("bad timestamp '" + fields[0] + "'", lineno, file + ":timestamp");
        if (!t.timestamps.empty() && *ts <= t.timestamps.back()) {
            throw ParseError("timestamps must be strictly increasing", lineno, file + ":timestamp");
        }
        t.timestamps.push_back(*ts);
        std::vector<double> row;
        for (std::size_t c = 1; c < fields.size(); ++c) {
            const std::string where = file + ":" + std::to_string(t.columns[c - 1]);
            if (fields[c].empty()) throw ParseError("missing value", lineno, where);
            double v = 0.0;
            try {
                v = csv::parse_double(fields[c]);
            } catch (const std::invalid_argument& e) {
                throw ParseError(e.what(), lineno, where);
            }
            if (!std::isfinite(v)) throw ParseError("non-finite value", lineno, where);
            row.push_back(v);
        }
        t.values.push_back(std::move(row));
    }
    if (t.timestamps.empty()) throw ParseError("no data rows", lineno, file);
    return t;
}

void require_same_stamps(const Table& a, const Table& b, const std::string& name) {
    if (a.timestamps != b.timestamps) throw ValidationError(name + " timestamps do not match p_load.csv");
}

void write_table(const std::filesystem::path& path, const std::vector<std::int64_t>& stamps,
                 const std::vector<BusId>& cols, const std::function<double(std::size_t, std::size_t)>& value) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "timestamp";
    for (auto c : cols) out << ',' << c;
    out << '\n';
    for (std::size_t k = 0; k < stamps.size(); ++k) {
        out << stamps[k];
        for (std::size_t c = 0; c < cols.size(); ++c) out << ',' << csv::num(value(k, c));
        out << '\n';
    }
}

std::vector<double> clamp_all(const Network& net, const Conditions& cond, std::span<const double> q) {
    std::vector<double> out(q.begin(), q.end());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = clamp_q(envelope(net.inverters[k], cond.pv_p[k]), out[k]);
    return out;
}

}  // namespace

double TimeSeries::dt_hours(std::size_t k) const {
    if (timestamps.size() < 2) return 0.0;
    const std::size_t i = k + 1 < timestamps.size() ? k : timestamps.size() - 2;
    return static_cast<double>(timestamps[i + 1] - timestamps[i]) / 3600.0;
}

TimeSeries read_timeseries(const Network& net, const std::filesystem::path& dir) {
    const auto p = read_table(dir / "p_load.csv");
    const auto q = read_table(dir / "q_load.csv");
    const auto pv = read_table(dir / "pv_p.csv");
    require_same_stamps(p, q, "q_load.csv");
    require_same_stamps(p, pv, "pv_p.csv");

    TimeSeries ts;
    ts.timestamps = p.timestamps;
    const auto n_bus = net.buses.size();
    std::vector<std::size_t> p_idx, q_idx, pv_idx(net.inverters.size(), SIZE_MAX);
    for (auto b : p.columns) p_idx.push_back(net.index_of(b));
    for (auto b : q.columns) q_idx.push_back(net.index_of(b));
    for (std::size_t c = 0; c < pv.columns.size(); ++c) {
        auto k = net.inverter_at(pv.columns[c]);
        if (!k) throw ValidationError("pv_p.csv column " + std::to_string(pv.columns[c]) + " has no inverter");
        pv_idx[*k] = c;
    }
    for (std::size_t k = 0; k < pv_idx.size(); ++k) {
        if (pv_idx[k] == SIZE_MAX) {
            throw ValidationError("pv_p.csv lacks inverter at bus " + std::to_string(net.inverters[k].bus));
        }
    }
    for (std::size_t k = 0; k < ts.timestamps.size(); ++k) {
        Conditions c;
        c.p_load.assign(n_bus, 0.0);
        c.q_load.assign(n_bus, 0.0);
        for (std::size_t j = 0; j < p_idx.size(); ++j) c.p_load[p_idx[j]] += p.values[k][j];
        for (std::size_t j = 0; j < q_idx.size(); ++j) c.q_load[q_idx[j]] += q.values[k][j];
        for (std::size_t i = 0; i < pv_idx.size(); ++i) c.pv_p.push_back(pv.values[k][pv_idx[i]]);
        ts.steps.push_back(std::move(c));
    }

    if (std::filesystem::exists(dir / "price.csv")) {
        std::ifstream in(dir / "price.csv");
        std::string line;
        std::getline(in, line);
        auto header = csv::split(line);
        if (header.size() != 2 || header[0] != "timestamp" || header[1] != "price") {
            throw ParseError("header must be 'timestamp,price'", 1, "price.csv");
        }
        std::vector<double> price;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line == "\r") continue;
            auto f = csv::split(line);
            if (f.size() != 2) throw ParseError("expected 2 fields", lineno, "price.csv");
            auto t = parse_timestamp(f[0]);
            const auto i = price.size();
            if (!t || i >= ts.timestamps.size() || *t != ts.timestamps[i]) {
                throw ParseError("timestamp does not match p_load.csv", lineno, "price.csv:timestamp");
            }
            if (f[1].empty()) throw ParseError("missing value", lineno, "price.csv:price");
            try {
                price.push_back(csv::parse_double(f[1]));
            } catch (const std::invalid_argument& e) {
                throw ParseError(e.what(), lineno, "price.csv:price");
            }
            if (!std::isfinite(price.back())) throw ParseError("non-finite value", lineno, "price.csv:price");
        }
        if (price.size() != ts.timestamps.size()) throw ValidationError("price.csv length differs from p_load.csv");
        ts.price = std::move(price);
    }
    return ts;
}

void write_timeseries(const Network& net, const TimeSeries& ts, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<BusId> bus_cols;
    std::vector<std::size_t> bus_idx;
    for (std::size_t i = 0; i < net.buses.size(); ++i) {
        if (net.buses[i].kind == BusKind::slack) continue;
        bus_cols.push_back(net.buses[i].id);
        bus_idx.push_back(i);
    }
    std::vector<BusId> pv_cols;
    for (const auto& inv : net.inverters) pv_cols.push_back(inv.bus);
    write_table(dir / "p_load.csv", ts.timestamps, bus_cols,
                [&](std::size_t k, std::size_t c) { return ts.steps[k].p_load[bus_idx[c]]; });
    write_table(dir / "q_load.csv", ts.timestamps, bus_cols,
                [&](std::size_t k, std::size_t c) { return ts.steps[k].q_load[bus_idx[c]]; });
    write_table(dir / "pv_p.csv", ts.timestamps, pv_cols,
                [&](std::size_t k, std::size_t c) { return ts.steps[k].pv_p[c]; });
    if (ts.price) {
        std::ofstream out(dir / "price.csv");
        out << "timestamp,price\n";
        for (std::size_t k = 0; k < ts.size(); ++k) out << ts.timestamps[k] << ',' << csv::num((*ts.price)[k]) << '\n';
    }
}

TimeSeries synthetic_week(const Network& net, std::uint64_t seed, const SyntheticWeekOptions& opt) {
    Rng rng(seed);
    TimeSeries ts;
    const auto base = base_conditions(net);
    const double pi = std::numbers::pi;
    double cloud_day = 1.0;
    std::int64_t day = -1;
    for (std::size_t k = 0; k < opt.steps; ++k) {
        const std::int64_t t = opt.start + static_cast<std::int64_t>(k) * opt.cadence_s;
        ts.timestamps.push_back(t);
        const double hour = static_cast<double>(((t % 86400) + 86400) % 86400) / 3600.0;
        if (t / 86400 != day) {
            day = t / 86400;
            cloud_day = 1.0 - opt.cloud_variability * rng.uniform();
        }
        const double shape = 0.55 + 0.25 * std::exp(-std::pow((hour - 8.0) / 2.0, 2)) +
                             0.40 * std::exp(-std::pow((hour - 19.0) / 2.5, 2));
        const double sun = hour > 6.0 && hour < 18.0 ? std::sin(pi * (hour - 6.0) / 12.0) : 0.0;
        const double passing = 1.0 - 0.5 * opt.cloud_variability * rng.uniform();

        Conditions c = base;
        for (std::size_t i = 0; i < c.p_load.size(); ++i) {
            const double f = shape * (1.0 + opt.load_noise * (2.0 * rng.uniform() - 1.0));
            c.p_load[i] = base.p_load[i] * f;
            c.q_load[i] = base.q_load[i] * f;
        }
        for (std::size_t j = 0; j < c.pv_p.size(); ++j) {
            c.pv_p[j] = net.inverters[j].p_rated * opt.pv_peak * sun * cloud_day * passing;
        }
        ts.steps.push_back(std::move(c));
    }
    return ts;
}

const char* to_string(StepStatus s) {
    switch (s) {
        case StepStatus::ok: return "ok";
        case StepStatus::fallback: return "fallback";
        case StepStatus::infeasible: return "infeasible";
        case StepStatus::skipped: return "skipped";
    }
    return "?";
}

TimeSeriesReport run_timeseries(const Network& net, const TimeSeries& ts, const TimeSeriesOptions& opt) {
    if (ts.steps.size() != ts.timestamps.size()) throw ValidationError("time series has misaligned steps");
    const auto m = net.inverters.size();
    TimeSeriesReport rep;
    rep.steps = ts.size();

    std::vector<std::vector<double>> prev_local(2);
    auto slot = [](Algorithm base) { return base == Algorithm::lfma ? 1 : 0; };

    for (std::size_t k = 0; k < ts.size(); ++k) {
        const auto& cond = ts.steps[k];
        auto row_for = [&](Algorithm a, StepStatus st, double loss, int n) {
            rep.rows.push_back({k, ts.timestamps[k], a, st, loss, n});
        };

        ControlOutcome none;
        try {
            none = run_local(net, cond, Algorithm::no_action, opt.hybrid.local);
        } catch (const ConvergenceError& e) {
            spdlog::warn("step {}: no-action state did not solve ({}); skipped", k, e.what());
            ++rep.skipped_steps;
            for (auto a : opt.algos) row_for(a, StepStatus::skipped, 0.0, 0);
            continue;
        }

        HybridOptions hopt = opt.hybrid;
        hopt.opf.force_failure = hopt.opf.force_failure || (opt.fault && opt.fault(k));
        std::optional<ControlOutcome> local[2];
        std::optional<ControlOutcome> central;
        bool local_failed[2] = {false, false};
        auto local_of = [&](Algorithm base) -> const ControlOutcome* {
            const int s = slot(base);
            if (!local[s] && !local_failed[s]) {
                try {
                    local[s] = run_local(net, cond, base, opt.hybrid.local);
                } catch (const ConvergenceError& e) {
                    spdlog::warn("step {}: {} did not solve ({})", k, to_string(base), e.what());
                    local_failed[s] = true;
                }
            }
            return local[s] ? &*local[s] : nullptr;
        };
        auto central_of = [&]() -> const ControlOutcome& {
            if (!central) central = run_central(net, cond, hopt);
            return *central;
        };

        for (auto a : opt.algos) {
            switch (a) {
                case Algorithm::no_action: row_for(a, StepStatus::ok, none.loss(), 0); break;
                case Algorithm::llma:
                case Algorithm::lfma: {
                    const auto* loc = local_of(a);
                    if (loc) {
                        row_for(a, StepStatus::ok, loc->loss(), 0);
                    } else {
                        row_for(a, StepStatus::infeasible, none.loss(), 0);
                    }
                    break;
                }
                case Algorithm::hybrid_llma:
                case Algorithm::hybrid_lfma: {
                    const auto base = a == Algorithm::hybrid_llma ? Algorithm::llma : Algorithm::lfma;
                    const auto* loc = local_of(base);
                    if (!loc) {
                        row_for(a, StepStatus::infeasible, none.loss(), 0);
                        break;
                    }
                    std::size_t n = m;
                    if (opt.n_central) {
                        n = std::min(*opt.n_central, m);
                    } else if (!hopt.opf.force_failure && !central_of().fallback) {
                        n = min_controllers(net, cond, *loc, central_of().loss(), opt.rel_gap, hopt).n;
                    }
                    auto h = run_hybrid(net, cond, *loc, n, hopt);
                    if (!h.fallback) {
                        row_for(a, StepStatus::ok, h.loss(), h.n_central);
                        break;
                    }
                    // Previous step's local setpoints, or this step's when there is none.
                    const auto& prev = prev_local[slot(base)];
                    double loss = loc->loss();
                    if (!prev.empty()) {
                        try {
                            loss = solve(net, injections(net, cond, clamp_all(net, cond, prev)), opt.hybrid.local.solver)
                                       .total_loss;
                        } catch (const ConvergenceError&) {
                        }
                    }
                    spdlog::warn("step {}: {} central stage failed; using previous-step {} setpoints", k,
                                 to_string(a), to_string(base));
                    row_for(a, StepStatus::fallback, loss, h.n_central);
                    break;
                }
                case Algorithm::opf: {
                    const auto& c = central_of();
                    if (c.fallback) spdlog::warn("step {}: centralized OPF failed; no-action applied", k);
                    row_for(a, c.fallback ? StepStatus::fallback : StepStatus::ok, c.loss(), c.n_central);
                    break;
                }
            }
        }
        for (auto base : {Algorithm::llma, Algorithm::lfma}) {
            if (local[slot(base)]) prev_local[slot(base)] = local[slot(base)]->q;
        }
    }

    std::optional<double> none_energy;
    for (auto a : opt.algos) {
        TimeSeriesTotals t;
        t.algo = a;
        std::vector<double> energy, cost, central;
        const double base_mva = net.base_mva;
        for (const auto& r : rep.rows) {
            if (r.algo != a || r.status == StepStatus::skipped) continue;
            const double mwh = r.loss * base_mva * ts.dt_hours(r.step);
            energy.push_back(mwh);
            if (opt.price) {
                cost.push_back(mwh * *opt.price);
            } else if (ts.price) {
                cost.push_back(mwh * (*ts.price)[r.step]);
            }
            central.push_back(static_cast<double>(r.n_central));
            if (r.status == StepStatus::infeasible) ++t.infeasible_steps;
            if (r.status == StepStatus::fallback) ++t.fallback_steps;
        }
        t.energy_mwh = compensated_sum(energy);
        if (opt.price || ts.price) t.cost = compensated_sum(cost);
        t.mean_central = summarize(central).mean;
        if (a == Algorithm::no_action) none_energy = t.energy_mwh;
        rep.totals.push_back(t);
    }
    if (!none_energy) {
        // Savings need the baseline even when it was not requested.
        std::vector<double> energy;
        for (std::size_t k = 0; k < ts.size(); ++k) {
            try {
                const auto p = run_local(net, ts.steps[k], Algorithm::no_action, opt.hybrid.local);
                energy.push_back(p.loss() * net.base_mva * ts.dt_hours(k));
            } catch (const ConvergenceError&) {
            }
        }
        none_energy = compensated_sum(energy);
    }
    for (auto& t : rep.totals) {
        t.savings_mwh = *none_energy - t.energy_mwh;
        t.savings_pct = *none_energy > 0.0 ? 100.0 * t.savings_mwh / *none_energy : 0.0;
    }
    return rep;
}

void write_step_csv(std::ostream& out, const TimeSeriesReport& rep) {
    out << "step,timestamp,algo,status,loss,n_central\n";
    for (const auto& r : rep.rows) {
        out << r.step << ',' << r.timestamp << ',' << to_string(r.algo) << ',' << to_string(r.status) << ','
            << csv::num(r.loss) << ',' << r.n_central << '\n';
    }
}

void write_totals_csv(std::ostream& out, const TimeSeriesReport& rep) {
    out << "algo,energy_mwh,cost,savings_mwh,savings_pct,infeasible_steps,fallback_steps,mean_central\n";
    for (const auto& t : rep.totals) {
        out << to_string(t.algo) << ',' << csv::num(t.energy_mwh) << ',' << (t.cost ? csv::num(*t.cost) : "") << ','
            << csv::num(t.savings_mwh) << ',' << csv::num(t.savings_pct) << ',' << t.infeasible_steps << ','
            << t.fallback_steps << ',' << csv::num(t.mean_central) << '\n';
    }
}

void write_totals_json(std::ostream& out, const TimeSeriesReport& rep) {
    using nlohmann::json;
    json doc;
    doc["steps"] = rep.steps;
    doc["skipped_steps"] = rep.skipped_steps;
    doc["algorithms"] = json::array();
    for (const auto& t : rep.totals) {
        doc["algorithms"].push_back({{"algo", std::string(to_string(t.algo))},
                                     {"energy_mwh", t.energy_mwh},
                                     {"cost", t.cost ? json(*t.cost) : json(nullptr)},
                                     {"savings_mwh", t.savings_mwh},
                                     {"savings_pct", t.savings_pct},
                                     {"infeasible_steps", t.infeasible_steps},
                                     {"fallback_steps", t.fallback_steps},
                                     {"mean_central", t.mean_central}});
    }
    out << doc.dump(2) << '\n';
}

}  // namespace qloss
