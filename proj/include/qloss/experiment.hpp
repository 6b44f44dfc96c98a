#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qloss/central_opt.hpp"
#include "qloss/control.hpp"
#include "qloss/generator.hpp"

namespace qloss {

struct EnsembleOptions {
    PlacementPolicy policy{};
    std::vector<Algorithm> algos{std::begin(all_algorithms), std::end(all_algorithms)};
    std::size_t reps = 100;
    std::uint64_t seed = 1;
    /// Fixed central-controller count for the hybrids; unset means the
    /// per-rep minimum within `rel_gap` of the full OPF.
    std::optional<std::size_t> n_central;
    double rel_gap = 1e-4;
    HybridOptions hybrid{};
};

struct RepRow {
    std::size_t rep = 0;
    std::uint64_t seed = 0;
    Algorithm algo = Algorithm::no_action;
    /// Solved and within the network's voltage limits.
    bool feasible = false;
    double loss = 0.0;
    double v_min = 0.0;
    double v_max = 0.0;
    int n_central = 0;
    /// 100 * (no-action loss - loss) / no-action loss.
    double decrease_pct = 0.0;
    bool fallback = false;
};

/// Neumaier-compensated sum.
double compensated_sum(std::span<const double> xs);

struct Summary {
    double mean = 0.0;
    /// Sample standard deviation (n - 1); zero for fewer than two values.
    double std = 0.0;
};

/// Compensated mean followed by a two-pass deviation sum. The report's numbers
/// are produced by this exact routine, so recomputing from CSV rows matches.
Summary summarize(std::span<const double> xs);

/// Linear-interpolation percentile (sorted copy, q in [0, 1]).
double percentile(std::vector<double> xs, double q);

struct AlgoStats {
    Algorithm algo = Algorithm::no_action;
    std::size_t feasible = 0;
    std::size_t infeasible = 0;
    Summary loss{};
    double v_min = 0.0;
    double v_max = 0.0;
    double mean_central = 0.0;
    /// min, 25th, median, 75th, max of decrease_pct.
    std::array<double, 5> decrease{};
};

struct ExperimentReport {
    std::string label;
    std::size_t reps = 0;
    std::vector<RepRow> rows;
    std::vector<AlgoStats> stats;
    /// Reps where the chain OPF <= hybrid <= local <= no-action broke (1e-9 slack).
    std::size_t ordering_violations = 0;
};

/// Aggregates rows by algorithm, in `algos` order.
ExperimentReport aggregate(std::string label, std::size_t reps, std::vector<RepRow> rows,
                           std::span<const Algorithm> algos);

/// `reps` random PV placements on `net`, each solved under every algorithm.
/// Rep r uses placement seed derive_seed(seed, r).
ExperimentReport run_ensemble(const Network& net, const EnsembleOptions& opt);

struct ReconfigEntry {
    BranchId off = 0;
    BranchId on = 0;
    bool valid = false;
    std::string error;
    ExperimentReport report;
};

/// One ensemble per reconfigured topology, all with the same placement seeds.
/// Invalid swaps are recorded with their error and skipped.
std::vector<ReconfigEntry> run_reconfig_study(const Network& net, std::span<const std::pair<BranchId, BranchId>> swaps,
                                              const EnsembleOptions& opt);

/// rep,seed,algo,feasible,loss,v_min,v_max,n_central,decrease_pct,fallback
void write_rep_csv(std::ostream& out, const ExperimentReport& rep);
void write_summary_csv(std::ostream& out, const ExperimentReport& rep);
void write_summary_json(std::ostream& out, const ExperimentReport& rep);
/// Wide table for box plots: rep followed by one decrease_pct column per algorithm.
void write_decrease_csv(std::ostream& out, const ExperimentReport& rep);

}  // namespace qloss
