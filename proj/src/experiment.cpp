#include "qloss/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "qloss/csv.hpp"
#include "qloss/errors.hpp"
#include "qloss/random.hpp"

namespace qloss {

namespace {

bool within_limits(const Network& net, const OperatingPoint& pt) {
    const auto slack = net.slack_index();
    for (std::size_t i = 0; i < pt.v.size(); ++i) {
        if (i == slack) continue;
        if (pt.v[i] < net.v_limits[0] || pt.v[i] > net.v_limits[1]) return false;
    }
    return true;
}

RepRow make_row(std::size_t rep, std::uint64_t seed, const Network& net, const ControlOutcome& out) {
    RepRow row;
    row.rep = rep;
    row.seed = seed;
    row.algo = out.algorithm;
    row.loss = out.loss();
    row.v_min = out.point.v_min();
    row.v_max = out.point.v_max();
    row.n_central = out.n_central;
    row.fallback = out.fallback;
    row.feasible = within_limits(net, out.point);
    return row;
}

const RepRow* find_row(std::span<const RepRow> rows, Algorithm a) {
    for (const auto& r : rows) {
        if (r.algo == a) return &r;
    }
    return nullptr;
}

// Whether one rep's rows break OPF <= hybrid <= local <= no-action.
bool ordering_broken(std::span<const RepRow> rows) {
    constexpr double slack = 1e-9;
    auto loss = [&](Algorithm a) -> std::optional<double> {
        const auto* r = find_row(rows, a);
        if (r == nullptr || !r->feasible || r->fallback) return std::nullopt;
        return r->loss;
    };
    auto le = [&](Algorithm a, Algorithm b) {
        auto la = loss(a), lb = loss(b);
        return !la || !lb || *la <= *lb + slack;
    };
    return !(le(Algorithm::llma, Algorithm::no_action) && le(Algorithm::lfma, Algorithm::llma) &&
             le(Algorithm::hybrid_llma, Algorithm::llma) && le(Algorithm::hybrid_lfma, Algorithm::lfma) &&
             le(Algorithm::opf, Algorithm::hybrid_llma) && le(Algorithm::opf, Algorithm::hybrid_lfma));
}

std::vector<RepRow> run_rep(const Network& net, std::size_t rep, std::uint64_t seed, const EnsembleOptions& opt) {
    std::vector<RepRow> rows;
    const auto placed = place_pvs(net, opt.policy, seed);
    const auto cond = base_conditions(placed);
    const auto m = placed.inverters.size();

    auto infeasible_row = [&](Algorithm a) {
        RepRow row;
        row.rep = rep;
        row.seed = seed;
        row.algo = a;
        row.loss = std::numeric_limits<double>::quiet_NaN();
        row.v_min = row.v_max = row.decrease_pct = row.loss;
        return row;
    };

    std::optional<ControlOutcome> local[2];
    std::optional<ControlOutcome> central;
    auto local_of = [&](Algorithm base) -> const ControlOutcome& {
        auto& slot = local[base == Algorithm::lfma ? 1 : 0];
        if (!slot) slot = run_local(placed, cond, base, opt.hybrid.local);
        return *slot;
    };
    auto central_of = [&]() -> const ControlOutcome& {
        if (!central) central = run_central(placed, cond, opt.hybrid);
        return *central;
    };

    for (auto a : opt.algos) {
        try {
            ControlOutcome out;
            switch (a) {
                case Algorithm::no_action: out = run_local(placed, cond, a, opt.hybrid.local); break;
                case Algorithm::llma:
                case Algorithm::lfma: out = local_of(a); break;
                case Algorithm::hybrid_llma:
                case Algorithm::hybrid_lfma: {
                    const auto base = a == Algorithm::hybrid_llma ? Algorithm::llma : Algorithm::lfma;
                    const auto& loc = local_of(base);
                    std::size_t n = 0;
                    if (opt.n_central) {
                        n = std::min(*opt.n_central, m);
                    } else {
                        n = min_controllers(placed, cond, loc, central_of().loss(), opt.rel_gap, opt.hybrid).n;
                    }
                    out = run_hybrid(placed, cond, loc, n, opt.hybrid);
                    break;
                }
                case Algorithm::opf: out = central_of(); break;
            }
            rows.push_back(make_row(rep, seed, placed, out));
        } catch (const ConvergenceError& e) {
            spdlog::debug("rep {}: {} failed: {}", rep, to_string(a), e.what());
            rows.push_back(infeasible_row(a));
        }
    }

    const auto* none = find_row(rows, Algorithm::no_action);
    for (auto& r : rows) {
        if (none != nullptr && none->feasible && r.feasible && none->loss > 0.0) {
            r.decrease_pct = 100.0 * (none->loss - r.loss) / none->loss;
        } else {
            r.decrease_pct = std::numeric_limits<double>::quiet_NaN();
        }
    }
    return rows;
}

std::string algo_name(Algorithm a) { return std::string(to_string(a)); }

}  // namespace

double compensated_sum(std::span<const double> xs) {
    double sum = 0.0, c = 0.0;
    for (double x : xs) {
        const double t = sum + x;
        c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    return sum + c;
}

Summary summarize(std::span<const double> xs) {
    Summary s;
    if (xs.empty()) return s;
    const double n = static_cast<double>(xs.size());
    s.mean = compensated_sum(xs) / n;
    if (xs.size() < 2) return s;
    std::vector<double> dev2;
    dev2.reserve(xs.size());
    for (double x : xs) dev2.push_back((x - s.mean) * (x - s.mean));
    s.std = std::sqrt(compensated_sum(dev2) / (n - 1.0));
    return s;
}

double percentile(std::vector<double> xs, double q) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const double h = q * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

ExperimentReport aggregate(std::string label, std::size_t reps, std::vector<RepRow> rows,
                           std::span<const Algorithm> algos) {
    ExperimentReport report;
    report.label = std::move(label);
    report.reps = reps;
    report.rows = std::move(rows);

    for (auto a : algos) {
        AlgoStats st;
        st.algo = a;
        std::vector<double> losses, decrease, central;
        st.v_min = std::numeric_limits<double>::quiet_NaN();
        st.v_max = st.v_min;
        for (const auto& r : report.rows) {
            if (r.algo != a) continue;
            if (!r.feasible) {
                ++st.infeasible;
                continue;
            }
            ++st.feasible;
            losses.push_back(r.loss);
            central.push_back(static_cast<double>(r.n_central));
            if (!std::isnan(r.decrease_pct)) decrease.push_back(r.decrease_pct);
            st.v_min = std::isnan(st.v_min) ? r.v_min : std::min(st.v_min, r.v_min);
            st.v_max = std::isnan(st.v_max) ? r.v_max : std::max(st.v_max, r.v_max);
        }
        st.loss = summarize(losses);
        st.mean_central = summarize(central).mean;
        const double qs[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
        for (int i = 0; i < 5; ++i) st.decrease[i] = percentile(decrease, qs[i]);
        report.stats.push_back(st);
    }

    std::size_t begin = 0;
    while (begin < report.rows.size()) {
        std::size_t end = begin;
        while (end < report.rows.size() && report.rows[end].rep == report.rows[begin].rep) ++end;
        if (ordering_broken(std::span(report.rows).subspan(begin, end - begin))) ++report.ordering_violations;
        begin = end;
    }
    return report;
}

ExperimentReport run_ensemble(const Network& net, const EnsembleOptions& opt) {
    if (opt.reps < 1) throw ValidationError("ensemble needs reps >= 1");
    std::vector<RepRow> rows;
    for (std::size_t rep = 0; rep < opt.reps; ++rep) {
        auto rep_rows = run_rep(net, rep, derive_seed(opt.seed, rep), opt);
        rows.insert(rows.end(), rep_rows.begin(), rep_rows.end());
    }
    return aggregate(net.name, opt.reps, std::move(rows), opt.algos);
}

std::vector<ReconfigEntry> run_reconfig_study(const Network& net, std::span<const std::pair<BranchId, BranchId>> swaps,
                                              const EnsembleOptions& opt) {
    std::vector<ReconfigEntry> out;
    for (auto [off, on] : swaps) {
        ReconfigEntry e;
        e.off = off;
        e.on = on;
        try {
            auto topo = reconfigure(net, off, on);
            e.valid = true;
            e.report = run_ensemble(topo, opt);
            e.report.label = "off " + std::to_string(off) + " on " + std::to_string(on);
        } catch (const ValidationError& err) {
            spdlog::warn("swap off {} on {} skipped: {}", off, on, err.what());
            e.error = err.what();
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_rep_csv(std::ostream& out, const ExperimentReport& rep) {
    out << "rep,seed,algo,feasible,loss,v_min,v_max,n_central,decrease_pct,fallback\n";
    for (const auto& r : rep.rows) {
        out << r.rep << ',' << r.seed << ',' << to_string(r.algo) << ',' << (r.feasible ? 1 : 0) << ','
            << csv::num(r.loss) << ',' << csv::num(r.v_min) << ',' << csv::num(r.v_max) << ',' << r.n_central << ','
            << csv::num(r.decrease_pct) << ',' << (r.fallback ? 1 : 0) << '\n';
    }
}

void write_summary_csv(std::ostream& out, const ExperimentReport& rep) {
    out << "algo,feasible,infeasible,mean_loss,std_loss,v_min,v_max,mean_central,"
           "decrease_min,decrease_p25,decrease_median,decrease_p75,decrease_max\n";
    for (const auto& s : rep.stats) {
        out << to_string(s.algo) << ',' << s.feasible << ',' << s.infeasible << ',' << csv::num(s.loss.mean) << ','
            << csv::num(s.loss.std) << ',' << csv::num(s.v_min) << ',' << csv::num(s.v_max) << ','
            << csv::num(s.mean_central);
        for (double d : s.decrease) out << ',' << csv::num(d);
        out << '\n';
    }
}

void write_summary_json(std::ostream& out, const ExperimentReport& rep) {
    using nlohmann::json;
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json doc;
    doc["label"] = rep.label;
    doc["reps"] = rep.reps;
    doc["ordering_violations"] = rep.ordering_violations;
    doc["algorithms"] = json::array();
    for (const auto& s : rep.stats) {
        json d = json::array();
        for (double v : s.decrease) d.push_back(num(v));
        doc["algorithms"].push_back({{"algo", algo_name(s.algo)},
                                     {"feasible", s.feasible},
                                     {"infeasible", s.infeasible},
                                     {"mean_loss", num(s.loss.mean)},
                                     {"std_loss", num(s.loss.std)},
                                     {"v_min", num(s.v_min)},
                                     {"v_max", num(s.v_max)},
                                     {"mean_central", num(s.mean_central)},
                                     {"decrease_percentiles", d}});
    }
    out << doc.dump(2) << '\n';
}

void write_decrease_csv(std::ostream& out, const ExperimentReport& rep) {
    out << "rep";
    for (const auto& s : rep.stats) out << ',' << to_string(s.algo);
    out << '\n';
    for (std::size_t r = 0; r < rep.reps; ++r) {
        out << r;
        for (const auto& s : rep.stats) {
            double v = std::numeric_limits<double>::quiet_NaN();
            for (const auto& row : rep.rows) {
                if (row.rep == r && row.algo == s.algo) v = row.decrease_pct;
            }
            out << ',' << csv::num(v);
        }
        out << '\n';
    }
}

}  // namespace qloss
