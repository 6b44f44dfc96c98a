#include "qloss/power_flow.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <ostream>
#include <unordered_map>

#include <Eigen/Dense>

#include "qloss/csv.hpp"
#include "qloss/errors.hpp"

namespace qloss {

namespace {

using Complex = std::complex<double>;

std::unordered_map<BusId, std::size_t> bus_positions(const Network& net) {
    std::unordered_map<BusId, std::size_t> pos;
    pos.reserve(net.buses.size());
    for (std::size_t i = 0; i < net.buses.size(); ++i) pos.emplace(net.buses[i].id, i);
    return pos;
}

void check_injections(const Network& net, const InjectionSet& inj) {
    if (inj.p.size() != net.buses.size() || inj.q.size() != net.buses.size()) {
        throw ValidationError("injection vectors must have one entry per bus");
    }
}

OperatingPoint empty_point(const Network& net) {
    OperatingPoint pt;
    pt.v.assign(net.buses.size(), net.slack_voltage);
    pt.angle.assign(net.buses.size(), 0.0);
    pt.branch_p.assign(net.branches.size(), 0.0);
    pt.branch_q.assign(net.branches.size(), 0.0);
    pt.branch_p_to.assign(net.branches.size(), 0.0);
    pt.branch_q_to.assign(net.branches.size(), 0.0);
    return pt;
}

}  // namespace

InjectionSet make_injections(const Network& net, std::span<const double> p_load, std::span<const double> q_load,
                             std::span<const double> pv_p, std::span<const double> q_setpoints) {
    const auto n = net.buses.size();
    if (p_load.size() != n || q_load.size() != n) throw ValidationError("load vectors must have one entry per bus");
    if (pv_p.size() != net.inverters.size()) throw ValidationError("pv output vector must match inverter count");
    if (!q_setpoints.empty() && q_setpoints.size() != net.inverters.size()) {
        throw ValidationError("setpoint vector must match inverter count");
    }
    InjectionSet inj;
    inj.p.resize(n);
    inj.q.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        inj.p[i] = -p_load[i];
        inj.q[i] = -q_load[i];
    }
    auto pos = bus_positions(net);
    for (std::size_t k = 0; k < net.inverters.size(); ++k) {
        const auto& inv = net.inverters[k];
        auto i = pos.at(inv.bus);
        inj.p[i] += std::min(pv_p[k], inv.p_rated);
        if (!q_setpoints.empty()) inj.q[i] += q_setpoints[k];
    }
    return inj;
}

InjectionSet base_injections(const Network& net, std::span<const double> q_setpoints) {
    std::vector<double> pv(net.inverters.size());
    for (std::size_t k = 0; k < pv.size(); ++k) pv[k] = net.inverters[k].p_now;
    return make_injections(net, net.bus_p_load(), net.bus_q_load(), pv, q_setpoints);
}

double OperatingPoint::v_min() const { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); }
double OperatingPoint::v_max() const { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

double OperatingPoint::p_out_of(const Network& net, BranchId k, BusId bus) const {
    const auto& br = net.branches.at(k);
    if (br.from_bus == bus) return branch_p[k];
    if (br.to_bus == bus) return -branch_p_to[k];
    throw ValidationError("bus " + std::to_string(bus) + " is not a terminal of branch " + std::to_string(k));
}

double OperatingPoint::q_out_of(const Network& net, BranchId k, BusId bus) const {
    const auto& br = net.branches.at(k);
    if (br.from_bus == bus) return branch_q[k];
    if (br.to_bus == bus) return -branch_q_to[k];
    throw ValidationError("bus " + std::to_string(bus) + " is not a terminal of branch " + std::to_string(k));
}

OperatingPoint solve_radial(const Network& net, const InjectionSet& inj, double tol, int max_iter) {
    if (!(tol > 0.0)) throw ValidationError("solver tolerance must be positive");
    check_injections(net, inj);
    if (net.has_admittance_only_elements()) {
        throw ValidationError("solve_radial does not model tap ratios or shunts; use solve_meshed");
    }
    const auto tree = orient_radial(net);
    const auto n = net.buses.size();

    // Per non-root bus: impedance of the branch feeding it in tree orientation.
    std::vector<double> r(n, 0.0), x(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        if (auto k = tree.parent_branch[c]) {
            r[c] = net.branches[*k].r;
            x[c] = net.branches[*k].x;
        }
    }

    const double v0 = net.slack_voltage;
    std::vector<double> vsq(n, v0 * v0), ps(n, 0.0), qs(n, 0.0), loss(n, 0.0);

    OperatingPoint pt = empty_point(net);
    bool converged = false;
    int iter = 0;
    for (; iter < max_iter && !converged; ++iter) {
        double delta = 0.0;
        // Backward sweep, leaves to root, with losses from the previous iterate.
        for (auto it = tree.order.rbegin(); it != tree.order.rend(); ++it) {
            const auto c = *it;
            if (c == tree.root) continue;
            double p_recv = -inj.p[c];
            double q_recv = -inj.q[c];
            for (auto d : tree.children[c]) {
                p_recv += ps[d];
                q_recv += qs[d];
            }
            const double up = vsq[*tree.parent[c]];
            const double l = (ps[c] * ps[c] + qs[c] * qs[c]) / up;
            const double new_p = p_recv + r[c] * l;
            const double new_q = q_recv + x[c] * l;
            delta = std::max({delta, std::abs(new_p - ps[c]), std::abs(new_q - qs[c])});
            ps[c] = new_p;
            qs[c] = new_q;
        }
        // Forward sweep, root to leaves.
        for (auto c : tree.order) {
            if (c == tree.root) continue;
            const double up = vsq[*tree.parent[c]];
            const double l = (ps[c] * ps[c] + qs[c] * qs[c]) / up;
            const double next = up - 2.0 * (r[c] * ps[c] + x[c] * qs[c]) + (r[c] * r[c] + x[c] * x[c]) * l;
            if (!(next > 0.0) || !std::isfinite(next)) {
                throw ConvergenceError("DistFlow sweep: voltage collapse at bus " + std::to_string(net.buses[c].id));
            }
            delta = std::max(delta, std::abs(std::sqrt(next) - std::sqrt(vsq[c])));
            vsq[c] = next;
            loss[c] = l;
        }
        converged = delta < tol;
    }
    if (!converged) {
        throw ConvergenceError("DistFlow sweep did not converge in " + std::to_string(max_iter) + " iterations");
    }

    pt.iterations = iter;
    double slack_p = -inj.p[tree.root];
    double slack_q = -inj.q[tree.root];
    for (auto d : tree.children[tree.root]) {
        slack_p += ps[d];
        slack_q += qs[d];
    }
    pt.slack_p = slack_p;
    pt.slack_q = slack_q;

    for (auto c : tree.order) {
        pt.v[c] = std::sqrt(vsq[c]);
        if (c == tree.root) continue;
        const auto p = *tree.parent[c];
        const auto k = *tree.parent_branch[c];
        const double vp = pt.v[p];
        pt.angle[c] = pt.angle[p] + std::atan2(-(x[c] * ps[c] - r[c] * qs[c]), vp * vp - (r[c] * ps[c] + x[c] * qs[c]));
        const double p_recv = ps[c] - r[c] * loss[c];
        const double q_recv = qs[c] - x[c] * loss[c];
        if (net.branches[k].from_bus == net.buses[p].id) {
            pt.branch_p[k] = ps[c];
            pt.branch_q[k] = qs[c];
            pt.branch_p_to[k] = p_recv;
            pt.branch_q_to[k] = q_recv;
        } else {
            pt.branch_p[k] = -p_recv;
            pt.branch_q[k] = -q_recv;
            pt.branch_p_to[k] = -ps[c];
            pt.branch_q_to[k] = -qs[c];
        }
        pt.total_loss += r[c] * loss[c];
    }
    return pt;
}

OperatingPoint solve_meshed(const Network& net, const InjectionSet& inj, double tol, int max_iter) {
    if (!(tol > 0.0)) throw ValidationError("solver tolerance must be positive");
    check_injections(net, inj);
    const auto n = net.buses.size();
    const auto slack = net.slack_index();
    auto pos = bus_positions(net);

    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (const auto& br : net.branches) {
        if (!br.in_service()) continue;
        const auto f = static_cast<Eigen::Index>(pos.at(br.from_bus));
        const auto t = static_cast<Eigen::Index>(pos.at(br.to_bus));
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const double a = br.tap_ratio;
        y(f, f) += ys / (a * a);
        y(t, t) += ys;
        y(f, t) -= ys / a;
        y(t, f) -= ys / a;
    }
    for (std::size_t i = 0; i < n; ++i) {
        y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += Complex(0.0, net.buses[i].active_shunt());
    }
    const Eigen::MatrixXd g = y.real();
    const Eigen::MatrixXd b = y.imag();

    // Unknown ordering: angles then magnitudes of every non-slack bus.
    std::vector<std::size_t> pq;
    pq.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i != slack) pq.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(pq.size());

    std::vector<double> vm(n, net.slack_voltage), va(n, 0.0);
    std::vector<double> pc(n), qc(n);
    auto injections = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            double p = 0.0, q = 0.0;
            const auto ii = static_cast<Eigen::Index>(i);
            for (std::size_t j = 0; j < n; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                const double gij = g(ii, jj), bij = b(ii, jj);
                if (gij == 0.0 && bij == 0.0) continue;
                const double th = va[i] - va[j];
                const double c = std::cos(th), s = std::sin(th);
                p += vm[j] * (gij * c + bij * s);
                q += vm[j] * (gij * s - bij * c);
            }
            pc[i] = vm[i] * p;
            qc[i] = vm[i] * q;
        }
    };

    Eigen::VectorXd mismatch(2 * m);
    Eigen::MatrixXd jac(2 * m, 2 * m);
    bool converged = false;
    int iter = 0;
    for (;; ++iter) {
        injections();
        for (Eigen::Index a = 0; a < m; ++a) {
            const auto i = pq[static_cast<std::size_t>(a)];
            mismatch(a) = inj.p[i] - pc[i];
            mismatch(a + m) = inj.q[i] - qc[i];
        }
        if (!mismatch.allFinite()) throw ConvergenceError("Newton-Raphson diverged");
        if (m == 0 || mismatch.lpNorm<Eigen::Infinity>() < tol) {
            converged = true;
            break;
        }
        if (iter >= max_iter) break;

        jac.setZero();
        for (Eigen::Index a = 0; a < m; ++a) {
            const auto i = pq[static_cast<std::size_t>(a)];
            const auto ii = static_cast<Eigen::Index>(i);
            for (Eigen::Index c = 0; c < m; ++c) {
                const auto j = pq[static_cast<std::size_t>(c)];
                const auto jj = static_cast<Eigen::Index>(j);
                if (i == j) {
                    const double gii = g(ii, ii), bii = b(ii, ii);
                    jac(a, c) = -qc[i] - bii * vm[i] * vm[i];
                    jac(a, c + m) = pc[i] / vm[i] + gii * vm[i];
                    jac(a + m, c) = pc[i] - gii * vm[i] * vm[i];
                    jac(a + m, c + m) = qc[i] / vm[i] - bii * vm[i];
                } else {
                    const double gij = g(ii, jj), bij = b(ii, jj);
                    if (gij == 0.0 && bij == 0.0) continue;
                    const double th = va[i] - va[j];
                    const double cs = std::cos(th), sn = std::sin(th);
                    jac(a, c) = vm[i] * vm[j] * (gij * sn - bij * cs);
                    jac(a, c + m) = vm[i] * (gij * cs + bij * sn);
                    jac(a + m, c) = -vm[i] * vm[j] * (gij * cs + bij * sn);
                    jac(a + m, c + m) = vm[i] * (gij * sn - bij * cs);
                }
            }
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
        if (!(lu.rcond() > 1e-14)) throw ConvergenceError("Newton-Raphson: singular Jacobian");
        const Eigen::VectorXd dx = lu.solve(mismatch);
        if (!dx.allFinite()) throw ConvergenceError("Newton-Raphson: singular Jacobian");
        for (Eigen::Index a = 0; a < m; ++a) {
            const auto i = pq[static_cast<std::size_t>(a)];
            va[i] += dx(a);
            vm[i] += dx(a + m);
            if (!(vm[i] > 0.0)) throw ConvergenceError("Newton-Raphson: voltage collapse");
        }
    }
    if (!converged) {
        throw ConvergenceError("Newton-Raphson did not converge in " + std::to_string(max_iter) + " iterations");
    }

    OperatingPoint pt = empty_point(net);
    pt.iterations = iter;
    pt.v = vm;
    pt.angle = va;
    pt.slack_p = pc[slack] - inj.p[slack];
    pt.slack_q = qc[slack] - inj.q[slack];
    for (BranchId k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        if (!br.in_service()) continue;
        const auto f = pos.at(br.from_bus);
        const auto t = pos.at(br.to_bus);
        const Complex vf = std::polar(vm[f], va[f]) / br.tap_ratio;
        const Complex vt = std::polar(vm[t], va[t]);
        const Complex current = (vf - vt) / Complex(br.r, br.x);
        const Complex s_from = vf * std::conj(current);
        const Complex s_to = vt * std::conj(current);
        pt.branch_p[k] = s_from.real();
        pt.branch_q[k] = s_from.imag();
        pt.branch_p_to[k] = s_to.real();
        pt.branch_q_to[k] = s_to.imag();
        pt.total_loss += br.r * std::norm(current);
    }
    return pt;
}

OperatingPoint solve(const Network& net, const InjectionSet& inj, const SolverOptions& opt) {
    if (net.is_radial() && !net.has_admittance_only_elements()) {
        return solve_radial(net, inj, opt.tol, opt.max_iter_radial);
    }
    return solve_meshed(net, inj, opt.tol, opt.max_iter_meshed);
}

double loss_of(const OperatingPoint& point, const Network& net) {
    auto pos = bus_positions(net);
    double total = 0.0;
    for (BranchId k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        if (!br.in_service()) continue;
        const double vf = point.v[pos.at(br.from_bus)] / br.tap_ratio;
        const double p = point.branch_p[k];
        const double q = point.branch_q[k];
        total += br.r * (p * p + q * q) / (vf * vf);
    }
    return total;
}

LtcResult apply_ltc(const Network& net, const InjectionSet& inj, const SolverOptions& opt) {
    if (net.tap_changers.empty()) throw ValidationError("apply_ltc: network has no tap changers");
    LtcResult res{net, {}, 0, 0, false};
    auto pos = bus_positions(net);

    int limit = 0;
    for (const auto& tc : net.tap_changers) {
        limit = std::max(limit, static_cast<int>(std::ceil((tc.tap_max - tc.tap_min) / tc.tap_step)));
    }
    limit = 2 * std::max(limit, 1);

    for (;;) {
        res.point = solve(res.net, inj, opt);
        bool moved = false;
        bool stuck = false;
        for (const auto& tc : net.tap_changers) {
            auto& tap = res.net.branches[tc.branch].tap_ratio;
            const double v = res.point.v[pos.at(tc.controlled_bus)];
            double next = tap;
            if (v > tc.v_band[1]) {
                next = std::min(tap + tc.tap_step, tc.tap_max);
            } else if (v < tc.v_band[0]) {
                next = std::max(tap - tc.tap_step, tc.tap_min);
            } else {
                continue;
            }
            if (next == tap) {
                stuck = true;
                continue;
            }
            tap = next;
            moved = true;
            ++res.tap_moves;
        }
        if (!moved) {
            res.limit_reached = stuck;
            return res;
        }
        if (++res.iterations > limit) {
            throw OscillationError("tap control did not settle within " + std::to_string(limit) + " iterations");
        }
    }
}

void write_bus_csv(std::ostream& out, const Network& net, const OperatingPoint& point) {
    out << "bus,v,angle\n";
    for (std::size_t i = 0; i < net.buses.size(); ++i) {
        out << net.buses[i].id << ',' << csv::num(point.v[i]) << ',' << csv::num(point.angle[i]) << '\n';
    }
}

void write_branch_csv(std::ostream& out, const Network& net, const OperatingPoint& point) {
    out << "branch,from,to,p,q,p_to,q_to\n";
    for (BranchId k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        if (!br.in_service()) continue;
        out << k << ',' << br.from_bus << ',' << br.to_bus << ',' << csv::num(point.branch_p[k]) << ','
            << csv::num(point.branch_q[k]) << ',' << csv::num(point.branch_p_to[k]) << ','
            << csv::num(point.branch_q_to[k]) << '\n';
    }
}

}  // namespace qloss
