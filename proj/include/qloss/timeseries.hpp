#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qloss/central_opt.hpp"
#include "qloss/control.hpp"

namespace qloss {

/// Aligned loads, PV outputs and (optionally) prices over a run of timestamps.
struct TimeSeries {
    /// Seconds since the epoch, strictly increasing.
    std::vector<std::int64_t> timestamps;
    /// One Conditions per step (per bus index / per inverter).
    std::vector<Conditions> steps;
    /// Currency per MWh, one per step, if a price file was supplied.
    std::optional<std::vector<double>> price;

    std::size_t size() const { return timestamps.size(); }
    /// Step length in hours; the last step reuses the previous one.
    double dt_hours(std::size_t k) const;
};

/// Reads p_load.csv, q_load.csv, pv_p.csv and optional price.csv from `dir`.
/// Columns are `timestamp` followed by bus ids (bus ids of the inverters for
/// pv_p.csv). Unlisted buses carry no load; every inverter must appear.
/// Timestamps are integer seconds or ISO-8601 UTC (YYYY-MM-DDTHH:MM[:SS]).
TimeSeries read_timeseries(const Network& net, const std::filesystem::path& dir);
void write_timeseries(const Network& net, const TimeSeries& ts, const std::filesystem::path& dir);

struct SyntheticWeekOptions {
    std::size_t steps = 2016;
    std::int64_t start = 1546300800;  // 2019-01-01T00:00:00Z
    std::int64_t cadence_s = 300;
    /// Multiplier on each PV's rating at solar noon on a clear day.
    double pv_peak = 0.9;
    double cloud_variability = 0.3;
    double load_noise = 0.05;
};

/// Daily load and irradiance shapes around the network's nominal loads.
TimeSeries synthetic_week(const Network& net, std::uint64_t seed, const SyntheticWeekOptions& opt = {});

struct TimeSeriesOptions {
    std::vector<Algorithm> algos{std::begin(all_algorithms), std::end(all_algorithms)};
    /// Fixed central-controller count for the hybrids; unset means the
    /// per-step minimum within `rel_gap` of the full OPF.
    std::optional<std::size_t> n_central;
    double rel_gap = 1e-4;
    /// Flat price in currency per MWh; overrides the series' own prices.
    std::optional<double> price;
    HybridOptions hybrid{};
    /// Fault injection: steps for which every OPF stage is forced to fail.
    std::function<bool(std::size_t)> fault;
};

enum class StepStatus { ok, fallback, infeasible, skipped };
const char* to_string(StepStatus s);

struct StepRow {
    std::size_t step = 0;
    std::int64_t timestamp = 0;
    Algorithm algo = Algorithm::no_action;
    StepStatus status = StepStatus::ok;
    /// Per-unit loss actually incurred at this step (0 when skipped).
    double loss = 0.0;
    int n_central = 0;
};

struct TimeSeriesTotals {
    Algorithm algo = Algorithm::no_action;
    double energy_mwh = 0.0;
    std::optional<double> cost;
    double savings_mwh = 0.0;
    double savings_pct = 0.0;
    std::size_t infeasible_steps = 0;
    std::size_t fallback_steps = 0;
    double mean_central = 0.0;
};

struct TimeSeriesReport {
    std::size_t steps = 0;
    /// Steps where the no-action state did not solve; excluded for every algorithm.
    std::size_t skipped_steps = 0;
    std::vector<TimeSeriesTotals> totals;
    std::vector<StepRow> rows;
};

TimeSeriesReport run_timeseries(const Network& net, const TimeSeries& ts, const TimeSeriesOptions& opt = {});

void write_step_csv(std::ostream& out, const TimeSeriesReport& rep);
void write_totals_csv(std::ostream& out, const TimeSeriesReport& rep);
void write_totals_json(std::ostream& out, const TimeSeriesReport& rep);

}  // namespace qloss
