#include "qloss/central_opt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "qloss/csv.hpp"
#include "qloss/errors.hpp"

namespace qloss {

namespace {

constexpr double armijo_c = 1e-4;
constexpr int max_backtracks = 40;

double voltage_violation(const Network& net, const OperatingPoint& pt, const std::array<double, 2>& lim) {
    const auto slack = net.slack_index();
    double s = 0.0;
    for (std::size_t i = 0; i < pt.v.size(); ++i) {
        if (i == slack) continue;
        const double over = std::max(0.0, pt.v[i] - lim[1]);
        const double under = std::max(0.0, lim[0] - pt.v[i]);
        s += over * over + under * under;
    }
    return s;
}

bool within_limits(const Network& net, const OperatingPoint& pt, const std::array<double, 2>& lim) {
    return voltage_violation(net, pt, lim) == 0.0;
}

// Penalized loss as a function of the free setpoints.
class Objective {
  public:
    Objective(const Network& net, const OpfProblem& prob, const OpfOptions& opt)
        : net_(net), prob_(prob), opt_(opt), full_(prob.fixed_q) {}

    double weight = 0.0;
    int evaluations = 0;

    double operator()(const Eigen::VectorXd& x) { return value(x, nullptr); }

    double value(const Eigen::VectorXd& x, OperatingPoint* keep) {
        ++evaluations;
        for (std::size_t i = 0; i < prob_.control_set.size(); ++i) {
            full_[prob_.control_set[i]] = x(static_cast<Eigen::Index>(i));
        }
        auto pt = solve(net_, injections(net_, prob_.cond, full_), opt_.solver);
        const double f = pt.total_loss + weight * voltage_violation(net_, pt, prob_.v_limits);
        if (keep) *keep = std::move(pt);
        return f;
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& x) {
        Eigen::VectorXd g(x.size());
        Eigen::VectorXd probe = x;
        const double h = opt_.fd_step;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            probe(i) = x(i) + h;
            const double up = (*this)(probe);
            probe(i) = x(i) - h;
            const double down = (*this)(probe);
            probe(i) = x(i);
            g(i) = (up - down) / (2.0 * h);
        }
        return g;
    }

    std::vector<double> full(const Eigen::VectorXd& x) {
        for (std::size_t i = 0; i < prob_.control_set.size(); ++i) {
            full_[prob_.control_set[i]] = x(static_cast<Eigen::Index>(i));
        }
        return full_;
    }

  private:
    const Network& net_;
    const OpfProblem& prob_;
    const OpfOptions& opt_;
    std::vector<double> full_;
};

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi) {
    if (x.size() == 0) return 0.0;
    return (x - project(x - g, lo, hi)).lpNorm<Eigen::Infinity>();
}

struct Descent {
    Eigen::VectorXd x;
    double f = 0.0;
    double pg_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Projected BFGS: inverse-Hessian model on the free variables, reset whenever
// the active set changes; projected Armijo backtracking.
Descent minimize(Objective& obj, Eigen::VectorXd x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                 const OpfOptions& opt, int& iter_budget) {
    const auto m = x.size();
    Descent st;
    x = project(x, lo, hi);
    double f = obj(x);
    Eigen::VectorXd g = obj.gradient(x);
    const double width = std::max((hi - lo).maxCoeff(), 1e-12);

    Eigen::MatrixXd h_inv;
    std::vector<bool> active(static_cast<std::size_t>(m), false), prev_active;
    bool fresh = true;

    for (;;) {
        st.pg_norm = projected_gradient_norm(x, g, lo, hi);
        if (st.pg_norm < opt.tol) {
            st.converged = true;
            break;
        }
        if (iter_budget <= 0) break;
        --iter_budget;
        ++st.iterations;

        for (Eigen::Index i = 0; i < m; ++i) {
            const double eps = 1e-14 * (1.0 + std::abs(x(i)));
            active[static_cast<std::size_t>(i)] =
                (x(i) <= lo(i) + eps && g(i) > 0.0) || (x(i) >= hi(i) - eps && g(i) < 0.0);
        }
        if (fresh || active != prev_active) {
            const double scale = 0.1 * width / std::max(g.lpNorm<Eigen::Infinity>(), 1e-300);
            if (fresh || h_inv.size() == 0) {
                h_inv = Eigen::MatrixXd::Identity(m, m) * scale;
            } else {
                // Keep the curvature scale learned so far.
                h_inv = Eigen::MatrixXd::Identity(m, m) * (h_inv.trace() / static_cast<double>(m));
            }
            fresh = false;
        }
        prev_active = active;

        Eigen::VectorXd gf = g;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (active[static_cast<std::size_t>(i)]) gf(i) = 0.0;
        }
        Eigen::VectorXd d = -(h_inv * gf);
        for (Eigen::Index i = 0; i < m; ++i) {
            if (active[static_cast<std::size_t>(i)]) d(i) = 0.0;
        }
        if (!(gf.dot(d) < 0.0)) {
            h_inv = Eigen::MatrixXd::Identity(m, m) * (0.1 * width / std::max(gf.lpNorm<Eigen::Infinity>(), 1e-300));
            d = -(h_inv * gf);
        }

        double alpha = 1.0;
        bool accepted = false;
        Eigen::VectorXd x_new;
        double f_new = f;
        for (int b = 0; b < max_backtracks; ++b, alpha *= 0.5) {
            x_new = project(x + alpha * d, lo, hi);
            f_new = obj(x_new);
            if (f_new <= f + armijo_c * g.dot(x_new - x)) {
                accepted = true;
                break;
            }
        }
        if (!accepted || (x_new - x).lpNorm<Eigen::Infinity>() == 0.0) break;

        Eigen::VectorXd g_new = obj.gradient(x_new);
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-16 * s.norm() * y.norm() && sy > 0.0) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m, m);
            h_inv = (eye - rho * s * y.transpose()) * h_inv * (eye - rho * y * s.transpose()) +
                    rho * s * s.transpose();
        }
        x = std::move(x_new);
        f = f_new;
        g = std::move(g_new);
    }
    st.x = std::move(x);
    st.f = f;
    return st;
}

std::vector<std::string> binding_constraints(const Network& net, const OpfProblem& prob, const OpfResult& res) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < prob.control_set.size(); ++i) {
        const auto k = prob.control_set[i];
        const double q = res.q[k];
        const auto& env = prob.bounds[i];
        const double eps = 1e-9 * (1.0 + std::abs(env.q_max));
        const auto bus = std::to_string(net.inverters[k].bus);
        if (q >= env.q_max - eps) out.push_back("q_max@" + bus);
        else if (q <= env.q_min + eps) out.push_back("q_min@" + bus);
    }
    for (std::size_t i = 0; i < res.point.v.size(); ++i) {
        const auto bus = std::to_string(net.buses[i].id);
        if (res.point.v[i] >= prob.v_limits[1] - 1e-6) out.push_back("v_max@" + bus);
        else if (res.point.v[i] <= prob.v_limits[0] + 1e-6) out.push_back("v_min@" + bus);
    }
    return out;
}

}  // namespace

OpfProblem make_opf_problem(const Network& net, const Conditions& cond, std::span<const double> q,
                            std::span<const std::size_t> control) {
    OpfProblem prob;
    prob.cond = cond;
    prob.fixed_q.assign(q.begin(), q.end());
    if (prob.fixed_q.empty()) prob.fixed_q.assign(net.inverters.size(), 0.0);
    if (control.empty()) {
        prob.control_set.resize(net.inverters.size());
        std::iota(prob.control_set.begin(), prob.control_set.end(), std::size_t{0});
    } else {
        prob.control_set.assign(control.begin(), control.end());
    }
    for (auto k : prob.control_set) prob.bounds.push_back(envelope(net.inverters.at(k), cond.pv_p.at(k)));
    prob.v_limits = net.v_limits;
    return prob;
}

OpfResult solve_opf(const Network& net, const OpfProblem& prob, const OpfOptions& opt) {
    if (prob.fixed_q.size() != net.inverters.size()) throw ValidationError("fixed_q must have one entry per inverter");
    if (prob.bounds.size() != prob.control_set.size()) throw ValidationError("every controlled inverter needs bounds");
    {
        auto sorted = prob.control_set;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ValidationError("control_set has duplicates");
        }
        if (!sorted.empty() && sorted.back() >= net.inverters.size()) throw ValidationError("control_set out of range");
    }
    if (opt.force_failure) throw ConvergenceError("OPF failure injected");

    const auto m = static_cast<Eigen::Index>(prob.control_set.size());
    Eigen::VectorXd lo(m), hi(m), x(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& env = prob.bounds[static_cast<std::size_t>(i)];
        lo(i) = env.q_min;
        hi(i) = env.q_max;
        x(i) = prob.fixed_q[prob.control_set[static_cast<std::size_t>(i)]];
    }

    Objective obj(net, prob, opt);
    OpfResult res;
    int budget = opt.max_iter;
    Descent st;
    if (m == 0) {
        st.x = x;
        st.converged = true;
    } else {
        st = minimize(obj, x, lo, hi, opt, budget);
    }
    res.q = obj.full(st.x);
    res.point = solve(net, injections(net, prob.cond, res.q), opt.solver);
    res.voltage_feasible = within_limits(net, res.point, prob.v_limits);

    // Voltage limits: raise the penalty weight until the iterate is feasible.
    for (int round = 0; m > 0 && !res.voltage_feasible && round < opt.penalty_rounds; ++round) {
        obj.weight = obj.weight == 0.0 ? opt.penalty_start : obj.weight * 10.0;
        budget = std::max(budget, opt.max_iter / 2);
        st = minimize(obj, st.x, lo, hi, opt, budget);
        res.q = obj.full(st.x);
        res.point = solve(net, injections(net, prob.cond, res.q), opt.solver);
        res.voltage_feasible = within_limits(net, res.point, prob.v_limits);
    }

    res.iterations = opt.max_iter - budget;
    res.evaluations = obj.evaluations;
    res.pg_norm = st.pg_norm;
    res.converged = st.converged;
    res.degraded = !st.converged;
    res.binding = binding_constraints(net, prob, res);
    return res;
}

ReserveRanking reserve_ranking(std::span<const ReserveInput> states) {
    ReserveRanking rank;
    rank.entries.reserve(states.size());
    for (std::size_t k = 0; k < states.size(); ++k) {
        rank.entries.push_back({k, states[k].bus, states[k].env.q_max - states[k].q_setpoint});
    }
    std::stable_sort(rank.entries.begin(), rank.entries.end(), [](const ReserveEntry& a, const ReserveEntry& b) {
        if (a.q_res != b.q_res) return a.q_res > b.q_res;
        return a.bus < b.bus;
    });
    return rank;
}

ReserveRanking reserve_ranking(const Network& net, const Conditions& cond, std::span<const double> q) {
    std::vector<ReserveInput> states;
    states.reserve(net.inverters.size());
    for (std::size_t k = 0; k < net.inverters.size(); ++k) {
        states.push_back({net.inverters[k].bus, envelope(net.inverters[k], cond.pv_p.at(k)), q[k]});
    }
    return reserve_ranking(states);
}

ControlOutcome run_hybrid(const Network& net, const Conditions& cond, const ControlOutcome& local, std::size_t n,
                          const HybridOptions& opt) {
    const auto m = net.inverters.size();
    if (n > m) throw ValidationError("hybrid: n exceeds the inverter count");
    ControlOutcome out = local;
    out.algorithm = local.algorithm == Algorithm::lfma ? Algorithm::hybrid_lfma : Algorithm::hybrid_llma;
    out.n_central = static_cast<int>(n);
    out.trace.clear();
    if (n == 0) return out;

    const auto rank = reserve_ranking(net, cond, local.q);
    std::vector<std::size_t> control;
    control.reserve(n);
    for (std::size_t i = 0; i < n; ++i) control.push_back(rank.entries[i].inverter);

    try {
        auto prob = make_opf_problem(net, cond, local.q, control);
        auto res = solve_opf(net, prob, opt.opf);
        if (!res.voltage_feasible) throw ConvergenceError("OPF could not satisfy voltage limits");
        out.q = std::move(res.q);
        out.point = std::move(res.point);
        out.degraded = res.degraded;
    } catch (const ConvergenceError& e) {
        spdlog::warn("hybrid {}: OPF failed ({}), keeping local setpoints", to_string(out.algorithm), e.what());
        out.fallback = true;
    }
    return out;
}

ControlOutcome run_hybrid(const Network& net, const Conditions& cond, Algorithm base_algo, std::size_t n,
                          const HybridOptions& opt) {
    if (base_algo != Algorithm::llma && base_algo != Algorithm::lfma) {
        throw ValidationError("hybrid base algorithm must be LLMA or LFMA");
    }
    return run_hybrid(net, cond, run_local(net, cond, base_algo, opt.local), n, opt);
}

ControlOutcome run_central(const Network& net, const Conditions& cond, const HybridOptions& opt) {
    ControlOutcome out;
    out.algorithm = Algorithm::opf;
    out.n_central = static_cast<int>(net.inverters.size());
    try {
        auto prob = make_opf_problem(net, cond, {}, {});
        auto res = solve_opf(net, prob, opt.opf);
        if (!res.voltage_feasible) throw ConvergenceError("OPF could not satisfy voltage limits");
        out.q = std::move(res.q);
        out.point = std::move(res.point);
        out.degraded = res.degraded;
    } catch (const ConvergenceError& e) {
        spdlog::warn("centralized OPF failed ({}), falling back to no-action", e.what());
        auto none = run_local(net, cond, Algorithm::no_action, opt.local);
        out.q = std::move(none.q);
        out.point = std::move(none.point);
        out.fallback = true;
    }
    return out;
}

ControlOutcome run_algorithm(const Network& net, const Conditions& cond, Algorithm algo, std::size_t n_central,
                             const HybridOptions& opt) {
    switch (algo) {
        case Algorithm::no_action:
        case Algorithm::llma:
        case Algorithm::lfma: return run_local(net, cond, algo, opt.local);
        case Algorithm::hybrid_llma: return run_hybrid(net, cond, Algorithm::llma, n_central, opt);
        case Algorithm::hybrid_lfma: return run_hybrid(net, cond, Algorithm::lfma, n_central, opt);
        case Algorithm::opf: return run_central(net, cond, opt);
    }
    throw ValidationError("unknown algorithm");
}

MinControllers min_controllers(const Network& net, const Conditions& cond, const ControlOutcome& local,
                               double opf_loss, double rel_gap, const HybridOptions& opt, double abs_slack) {
    if (!(rel_gap >= 0.0)) throw ValidationError("rel_gap must be non-negative");
    const auto m = net.inverters.size();
    const double target = (1.0 + rel_gap) * opf_loss + abs_slack;
    auto loss_at = [&](std::size_t n) { return n == 0 ? local.loss() : run_hybrid(net, cond, local, n, opt).loss(); };

    MinControllers res;
    res.opf_loss = opf_loss;
    double best = loss_at(0);
    if (best <= target || m == 0) {
        res.n = 0;
    } else {
        std::size_t lo = 0, hi = m;
        double hi_loss = loss_at(m);
        if (hi_loss > target) {
            res.n = m;
            best = hi_loss;
        } else {
            while (hi - lo > 1) {
                const auto mid = lo + (hi - lo) / 2;
                const double l = loss_at(mid);
                if (l <= target) {
                    hi = mid;
                    hi_loss = l;
                } else {
                    lo = mid;
                }
            }
            res.n = hi;
            best = hi_loss;
        }
    }
    res.hybrid_loss = best;
    res.gap = opf_loss > 0.0 ? best / opf_loss - 1.0 : 0.0;
    return res;
}

MinControllers min_controllers(const Network& net, const Conditions& cond, Algorithm base_algo, double rel_gap,
                               const HybridOptions& opt, double abs_slack) {
    if (!(rel_gap >= 0.0)) throw ValidationError("rel_gap must be non-negative");
    auto local = run_local(net, cond, base_algo, opt.local);
    auto central = run_central(net, cond, opt);
    return min_controllers(net, cond, local, central.loss(), rel_gap, opt, abs_slack);
}

void write_opf_report(std::ostream& out, const OpfResult& res) {
    out << "iterations,final_loss,pg_norm,converged,degraded,binding\n";
    out << res.iterations << ',' << csv::num(res.point.total_loss) << ',' << csv::num(res.pg_norm) << ','
        << (res.converged ? 1 : 0) << ',' << (res.degraded ? 1 : 0) << ',';
    for (std::size_t i = 0; i < res.binding.size(); ++i) out << (i ? ";" : "") << res.binding[i];
    out << '\n';
}

}  // namespace qloss
