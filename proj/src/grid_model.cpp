#include "qloss/grid_model.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_map>
#include <unordered_set>

#include "qloss/errors.hpp"

namespace qloss {

namespace {

bool finite(double v) { return std::isfinite(v); }

[[noreturn]] void invalid(const std::string& what) { throw ValidationError(what); }

// Breadth-first reach over in-service branches from the slack bus.
std::vector<bool> reachable_from_slack(const Network& net) {
    std::vector<std::vector<std::size_t>> adj(net.buses.size());
    for (const auto& br : net.branches) {
        if (!br.in_service()) continue;
        auto a = net.index_of(br.from_bus);
        auto b = net.index_of(br.to_bus);
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<bool> seen(net.buses.size(), false);
    std::queue<std::size_t> open;
    auto root = net.slack_index();
    seen[root] = true;
    open.push(root);
    while (!open.empty()) {
        auto u = open.front();
        open.pop();
        for (auto v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                open.push(v);
            }
        }
    }
    return seen;
}

}  // namespace

std::optional<std::size_t> Network::find_bus(BusId id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == id) return i;
    }
    return std::nullopt;
}

std::size_t Network::index_of(BusId id) const {
    if (auto idx = find_bus(id)) return *idx;
    throw ValidationError("unknown bus id " + std::to_string(id));
}

std::size_t Network::slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].kind == BusKind::slack) return i;
    }
    throw ValidationError("network has no slack bus");
}

std::size_t Network::in_service_branch_count() const {
    return static_cast<std::size_t>(
        std::count_if(branches.begin(), branches.end(), [](const Branch& b) { return b.in_service(); }));
}

bool Network::is_radial() const { return in_service_branch_count() + 1 == buses.size(); }

bool Network::has_admittance_only_elements() const {
    for (const auto& b : buses) {
        if (b.active_shunt() != 0.0) return true;
    }
    for (const auto& br : branches) {
        if (br.in_service() && br.tap_ratio != 1.0) return true;
    }
    return false;
}

std::vector<BranchId> Network::incident_branches(BusId bus) const {
    std::vector<BranchId> out;
    for (BranchId k = 0; k < branches.size(); ++k) {
        const auto& br = branches[k];
        if (br.in_service() && (br.from_bus == bus || br.to_bus == bus)) out.push_back(k);
    }
    return out;
}

std::optional<BranchId> Network::find_branch(BusId a, BusId b) const {
    for (BranchId k = 0; k < branches.size(); ++k) {
        const auto& br = branches[k];
        if ((br.from_bus == a && br.to_bus == b) || (br.from_bus == b && br.to_bus == a)) return k;
    }
    return std::nullopt;
}

std::optional<std::size_t> Network::inverter_at(BusId bus) const {
    for (std::size_t k = 0; k < inverters.size(); ++k) {
        if (inverters[k].bus == bus) return k;
    }
    return std::nullopt;
}

std::vector<double> Network::bus_p_load() const {
    std::vector<double> out(buses.size(), 0.0);
    for (const auto& l : loads) out[index_of(l.bus)] += l.p_load;
    return out;
}

std::vector<double> Network::bus_q_load() const {
    std::vector<double> out(buses.size(), 0.0);
    for (const auto& l : loads) out[index_of(l.bus)] += l.q_load;
    return out;
}

void validate(const Network& net) {
    if (net.buses.empty()) invalid("network has no buses");
    if (!(net.base_mva > 0.0) || !finite(net.base_mva)) invalid("base_mva must be positive");
    if (!(net.slack_voltage > 0.0) || !finite(net.slack_voltage)) invalid("slack_voltage must be positive");
    if (!(net.v_limits[0] < net.v_limits[1])) invalid("v_limits must satisfy v_min < v_max");

    std::unordered_set<BusId> ids;
    int slack_count = 0;
    for (const auto& b : net.buses) {
        if (!ids.insert(b.id).second) invalid("duplicate bus id " + std::to_string(b.id));
        if (b.kind == BusKind::slack) ++slack_count;
        if (!finite(b.shunt_susceptance)) invalid("non-finite shunt at bus " + std::to_string(b.id));
    }
    if (slack_count != 1) {
        invalid("exactly one slack bus required, found " + std::to_string(slack_count));
    }

    for (BranchId k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        const std::string tag = "branch " + std::to_string(k);
        if (!ids.contains(br.from_bus) || !ids.contains(br.to_bus)) invalid(tag + " references an unknown bus");
        if (br.from_bus == br.to_bus) invalid(tag + " has from_bus == to_bus");
        if (!finite(br.r) || !finite(br.x) || !finite(br.tap_ratio)) invalid(tag + " has non-finite parameters");
        if (br.r < 0.0) invalid(tag + " has negative resistance");
        if (br.in_service() && !(br.r + std::abs(br.x) > 0.0)) invalid(tag + " has zero impedance");
        if (!(br.tap_ratio > 0.0)) invalid(tag + " has non-positive tap ratio");
    }

    for (const auto& l : net.loads) {
        if (!ids.contains(l.bus)) invalid("load at unknown bus " + std::to_string(l.bus));
        if (!finite(l.p_load) || !finite(l.q_load)) invalid("non-finite load at bus " + std::to_string(l.bus));
    }

    std::unordered_set<BusId> inverter_buses;
    for (const auto& inv : net.inverters) {
        const std::string tag = "inverter at bus " + std::to_string(inv.bus);
        if (!ids.contains(inv.bus)) invalid(tag + " references an unknown bus");
        if (!inverter_buses.insert(inv.bus).second) invalid("more than one inverter at bus " + std::to_string(inv.bus));
        if (net.buses[net.index_of(inv.bus)].kind == BusKind::slack) invalid(tag + " sits on the slack bus");
        if (!finite(inv.s_rated) || !finite(inv.p_rated) || !finite(inv.p_now)) invalid(tag + " has non-finite ratings");
        if (inv.s_rated < 0.0 || inv.p_rated < 0.0) invalid(tag + " has negative rating");
        if (!net.allow_unequal_ratings && inv.s_rated != inv.p_rated) {
            invalid(tag + " violates s_rated == p_rated");
        }
        if (!(inv.pf_limit > 0.0 && inv.pf_limit <= 1.0)) invalid(tag + " needs 0 < pf_limit <= 1");
        if (inv.p_now < 0.0) invalid(tag + " has negative active output");
    }

    for (const auto& tc : net.tap_changers) {
        const std::string tag = "tap changer on branch " + std::to_string(tc.branch);
        if (tc.branch >= net.branches.size()) invalid(tag + " references an unknown branch");
        if (!ids.contains(tc.controlled_bus)) invalid(tag + " controls an unknown bus");
        if (!(tc.tap_min <= tc.tap_max)) invalid(tag + " needs tap_min <= tap_max");
        if (!(tc.tap_step > 0.0)) invalid(tag + " needs tap_step > 0");
        if (!(tc.v_band[0] < tc.v_band[1])) invalid(tag + " needs v_lo < v_hi");
    }

    auto seen = reachable_from_slack(net);
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) {
            throw DisconnectionError("bus " + std::to_string(net.buses[i].id) +
                                     " is not connected to the slack bus");
        }
    }
}

Network make_network(Network net) {
    validate(net);
    return net;
}

OrientedTree orient_radial(const Network& net) {
    const auto n = net.buses.size();
    if (!net.is_radial()) {
        throw NotRadialError("network has " + std::to_string(net.in_service_branch_count()) +
                             " in-service branches for " + std::to_string(n) + " buses");
    }
    std::vector<std::vector<std::pair<std::size_t, BranchId>>> adj(n);
    for (BranchId k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        if (!br.in_service()) continue;
        auto a = net.index_of(br.from_bus);
        auto b = net.index_of(br.to_bus);
        adj[a].emplace_back(b, k);
        adj[b].emplace_back(a, k);
    }

    OrientedTree tree;
    tree.root = net.slack_index();
    tree.parent.assign(n, std::nullopt);
    tree.parent_branch.assign(n, std::nullopt);
    tree.children.assign(n, {});
    tree.order.reserve(n);

    std::vector<bool> seen(n, false);
    std::queue<std::size_t> open;
    seen[tree.root] = true;
    open.push(tree.root);
    while (!open.empty()) {
        auto u = open.front();
        open.pop();
        tree.order.push_back(u);
        for (auto [v, k] : adj[u]) {
            if (tree.parent_branch[u] == k) continue;
            if (seen[v]) throw NotRadialError("cycle through branch " + std::to_string(k));
            seen[v] = true;
            tree.parent[v] = u;
            tree.parent_branch[v] = k;
            tree.children[u].push_back(v);
            open.push(v);
        }
    }
    if (tree.order.size() != n) throw NotRadialError("in-service graph is not a spanning tree");
    return tree;
}

Network reconfigure(const Network& net, BranchId off, BranchId on) {
    if (off >= net.branches.size() || on >= net.branches.size()) {
        throw ValidationError("reconfigure: unknown branch id");
    }
    if (off == on) return net;
    if (!net.branches[off].in_service()) {
        throw ValidationError("reconfigure: branch " + std::to_string(off) + " is already switched off");
    }
    if (net.branches[on].in_service()) {
        throw ValidationError("reconfigure: branch " + std::to_string(on) + " is already in service");
    }
    Network out = net;
    out.branches[off].status = BranchStatus::switched_off;
    out.branches[on].status = BranchStatus::in_service;
    validate(out);
    return out;
}

const char* to_string(BusKind k) { return k == BusKind::slack ? "slack" : "load"; }

const char* to_string(BranchStatus s) {
    return s == BranchStatus::in_service ? "in-service" : "switched-off";
}

}  // namespace qloss
