#include "qloss/generator.hpp"

#include <algorithm>
#include <numeric>

#include "qloss/errors.hpp"
#include "qloss/random.hpp"

namespace qloss {

namespace {

// Partial Fisher-Yates: the first k entries become a uniform sample.
template <class T>
void sample_prefix(std::vector<T>& items, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k && i < items.size(); ++i) {
        const auto j = i + static_cast<std::size_t>(rng.index(items.size() - i));
        std::swap(items[i], items[j]);
    }
}

}  // namespace

Network synthetic_radial(const RadialOptions& opt, std::uint64_t seed) {
    if (opt.n_buses < 1) throw ValidationError("synthetic_radial: need at least one bus");
    if (opt.max_depth < 1 && opt.n_buses > 1) throw ValidationError("synthetic_radial: max_depth must be >= 1");
    Rng rng(seed);
    Network net;
    net.name = "synthetic-radial-" + std::to_string(opt.n_buses);
    net.base_mva = opt.base_mva;
    net.base_kv = opt.base_kv;
    net.slack_voltage = opt.slack_voltage;

    const auto n = static_cast<std::size_t>(opt.n_buses);
    std::vector<int> depth(n, 0);
    net.buses.push_back({1, BusKind::slack, 0.0, true});
    for (std::size_t k = 1; k < n; ++k) {
        net.buses.push_back({static_cast<BusId>(k + 1), BusKind::load, 0.0, true});
        std::size_t parent = k - 1;
        if (!(depth[parent] < opt.max_depth && rng.bernoulli(opt.chain_bias))) {
            std::vector<std::size_t> open;
            for (std::size_t j = 0; j < k; ++j) {
                if (depth[j] < opt.max_depth) open.push_back(j);
            }
            parent = open[static_cast<std::size_t>(rng.index(open.size()))];
        }
        depth[k] = depth[parent] + 1;
        Branch br;
        br.from_bus = static_cast<BusId>(parent + 1);
        br.to_bus = static_cast<BusId>(k + 1);
        br.r = rng.uniform(opt.r_min, opt.r_max);
        br.x = rng.uniform(opt.x_min, opt.x_max);
        net.branches.push_back(br);
    }

    std::vector<BusId> load_buses;
    if (opt.n_loads > 0) {
        std::vector<BusId> candidates;
        for (std::size_t k = 1; k < n; ++k) candidates.push_back(static_cast<BusId>(k + 1));
        const auto count = std::min<std::size_t>(static_cast<std::size_t>(opt.n_loads), candidates.size());
        sample_prefix(candidates, count, rng);
        load_buses.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(load_buses.begin(), load_buses.end());
    } else {
        for (std::size_t k = 1; k < n; ++k) {
            if (rng.bernoulli(opt.load_probability)) load_buses.push_back(static_cast<BusId>(k + 1));
        }
    }
    for (auto b : load_buses) {
        const double p = rng.uniform(opt.p_load_min, opt.p_load_max);
        const double q = p * rng.uniform(opt.q_ratio_min, opt.q_ratio_max);
        net.loads.push_back({b, p, q});
    }
    if (!net.loads.empty() && (opt.total_p > 0.0 || opt.total_q > 0.0)) {
        double sp = 0.0, sq = 0.0;
        for (const auto& l : net.loads) {
            sp += l.p_load;
            sq += l.q_load;
        }
        for (auto& l : net.loads) {
            if (opt.total_p > 0.0) l.p_load *= opt.total_p / sp;
            if (opt.total_q > 0.0) l.q_load *= opt.total_q / sq;
        }
    }

    for (int t = 0, attempts = 0; t < opt.n_ties && attempts < 100 * opt.n_ties; ++attempts) {
        const auto a = static_cast<BusId>(rng.index(n) + 1);
        const auto b = static_cast<BusId>(rng.index(n) + 1);
        if (a == b || net.find_branch(a, b)) continue;
        Branch tie;
        tie.from_bus = std::min(a, b);
        tie.to_bus = std::max(a, b);
        tie.r = rng.uniform(opt.r_min, opt.r_max);
        tie.x = rng.uniform(opt.x_min, opt.x_max);
        tie.status = BranchStatus::switched_off;
        net.branches.push_back(tie);
        ++t;
    }
    return make_network(std::move(net));
}

RadialOptions feeder141_options() {
    RadialOptions opt;
    opt.n_buses = 141;
    opt.max_depth = 30;
    opt.chain_bias = 0.75;
    opt.r_min = 0.002;
    opt.r_max = 0.012;
    opt.x_min = 0.002;
    opt.x_max = 0.010;
    opt.n_loads = 84;
    opt.total_p = 1.194;
    opt.total_q = 0.740;
    opt.n_ties = 3;
    opt.base_mva = 10.0;
    opt.base_kv = 12.47;
    return opt;
}

Network place_pvs(const Network& base, const PlacementPolicy& policy, std::uint64_t seed) {
    std::vector<BusId> eligible = policy.eligible_buses;
    if (eligible.empty()) {
        for (const auto& b : base.buses) {
            if (b.kind != BusKind::slack) eligible.push_back(b.id);
        }
    }
    if (policy.n_pvs < 0 || static_cast<std::size_t>(policy.n_pvs) > eligible.size()) {
        throw ValidationError("placement: n_pvs exceeds the number of eligible buses");
    }
    Rng rng(seed);
    sample_prefix(eligible, static_cast<std::size_t>(policy.n_pvs), rng);
    std::vector<BusId> chosen(eligible.begin(), eligible.begin() + policy.n_pvs);
    std::sort(chosen.begin(), chosen.end());

    Network net = base;
    net.inverters.clear();
    const double rating = policy.n_pvs > 0 ? policy.total_capacity / policy.n_pvs : 0.0;
    for (auto bus : chosen) {
        InverterSpec inv;
        inv.bus = bus;
        inv.s_rated = rating;
        inv.p_rated = rating;
        inv.pf_limit = policy.pf_limit;
        inv.p_now = rating * rng.uniform(policy.output_min, policy.output_max);
        net.inverters.push_back(inv);
    }
    return make_network(std::move(net));
}

std::vector<std::pair<BranchId, BranchId>> loop_swaps(const Network& net, BranchId on) {
    if (on >= net.branches.size() || net.branches[on].in_service()) {
        throw ValidationError("loop_swaps: branch must exist and be switched off");
    }
    const auto tree = orient_radial(net);
    auto a = net.index_of(net.branches[on].from_bus);
    auto b = net.index_of(net.branches[on].to_bus);
    auto path_to_root = [&](std::size_t u) {
        std::vector<std::size_t> path{u};
        while (tree.parent[u]) {
            u = *tree.parent[u];
            path.push_back(u);
        }
        return path;
    };
    auto pa = path_to_root(a);
    auto pb = path_to_root(b);
    // Strip the shared tail so only the loop remains.
    while (pa.size() > 1 && pb.size() > 1 && pa[pa.size() - 2] == pb[pb.size() - 2]) {
        pa.pop_back();
        pb.pop_back();
    }
    std::vector<std::pair<BranchId, BranchId>> swaps;
    for (const auto* path : {&pa, &pb}) {
        for (std::size_t i = 0; i + 1 < path->size(); ++i) swaps.emplace_back(*tree.parent_branch[(*path)[i]], on);
    }
    std::sort(swaps.begin(), swaps.end());
    return swaps;
}

}  // namespace qloss
