#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace qloss {

using BusId = int;
/// Branches are identified by their position in Network::branches.
using BranchId = std::size_t;

enum class BusKind { slack, load };
enum class BranchStatus { in_service, switched_off };

struct Bus {
    BusId id = 0;
    BusKind kind = BusKind::load;
    /// Fixed shunt susceptance in per-unit at 1 p.u. voltage (positive = capacitive).
    double shunt_susceptance = 0.0;
    bool shunt_on = true;

    double active_shunt() const { return shunt_on ? shunt_susceptance : 0.0; }
    bool operator==(const Bus&) const = default;
};

struct Branch {
    BusId from_bus = 0;
    BusId to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    /// Off-nominal ratio of an ideal transformer on the from side.
    double tap_ratio = 1.0;
    BranchStatus status = BranchStatus::in_service;

    bool in_service() const { return status == BranchStatus::in_service; }
    bool operator==(const Branch&) const = default;
};

struct LoadPoint {
    BusId bus = 0;
    double p_load = 0.0;
    double q_load = 0.0;
    bool operator==(const LoadPoint&) const = default;
};

struct InverterSpec {
    BusId bus = 0;
    double s_rated = 0.0;
    double p_rated = 0.0;
    double pf_limit = 0.8;
    /// Present active output of the PV panel behind the inverter.
    double p_now = 0.0;
    bool operator==(const InverterSpec&) const = default;
};

struct TapChanger {
    BranchId branch = 0;
    BusId controlled_bus = 0;
    double tap_min = 0.9;
    double tap_max = 1.1;
    double tap_step = 0.0125;
    std::array<double, 2> v_band{0.95, 1.05};
    bool operator==(const TapChanger&) const = default;
};

/// Immutable grid description. Build one with make_network(), which checks
/// every invariant; the public members are the data, not an invitation to
/// mutate a validated instance.
struct Network {
    std::string name;
    double base_mva = 1.0;
    double base_kv = 1.0;
    double slack_voltage = 1.0;
    std::array<double, 2> v_limits{0.90, 1.10};
    /// Accept inverters whose apparent rating differs from the active rating.
    bool allow_unequal_ratings = false;

    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<LoadPoint> loads;
    std::vector<InverterSpec> inverters;
    std::vector<TapChanger> tap_changers;

    bool operator==(const Network&) const = default;

    std::size_t bus_count() const { return buses.size(); }
    /// Position of a bus id in `buses`; throws ValidationError when unknown.
    std::size_t index_of(BusId id) const;
    std::optional<std::size_t> find_bus(BusId id) const;
    std::size_t slack_index() const;
    std::size_t in_service_branch_count() const;
    bool is_radial() const;
    /// Any tap ratio or shunt that only the admittance-matrix solver models.
    bool has_admittance_only_elements() const;
    /// In-service branches touching a bus, ascending by id.
    std::vector<BranchId> incident_branches(BusId bus) const;
    std::optional<BranchId> find_branch(BusId a, BusId b) const;
    /// Index into `inverters` of the inverter at a bus, if any.
    std::optional<std::size_t> inverter_at(BusId bus) const;

    /// Aggregated active/reactive demand per bus index.
    std::vector<double> bus_p_load() const;
    std::vector<double> bus_q_load() const;
};

/// Checks all invariants and returns the network unchanged.
/// Throws ValidationError naming the violated invariant.
Network make_network(Network net);
void validate(const Network& net);

/// Parent/child structure of a radial network rooted at the slack bus.
struct OrientedTree {
    std::size_t root = 0;
    /// Per bus index; nullopt for the root.
    std::vector<std::optional<std::size_t>> parent;
    std::vector<std::optional<BranchId>> parent_branch;
    std::vector<std::vector<std::size_t>> children;
    /// Bus indices root-first (breadth-first order).
    std::vector<std::size_t> order;
};

/// Throws NotRadialError when the in-service graph has a cycle.
OrientedTree orient_radial(const Network& net);

/// Switches `off` out of service and `on` into service, revalidating.
/// `off == on` is an identity. Throws DisconnectionError if the grid splits.
Network reconfigure(const Network& net, BranchId off, BranchId on);

const char* to_string(BusKind k);
const char* to_string(BranchStatus s);

}  // namespace qloss
