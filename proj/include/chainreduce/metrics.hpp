#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chainreduce/sim.hpp"

namespace chainreduce {

/// Min/max used to normalize makespan and energy variance before summing
/// them into the scalar objective. Compute them over every trace that takes
/// part in a comparison so the scores are commensurable.
struct ObjectiveBounds {
    double t_min = 0.0;
    double t_max = 1.0;
    double e_min = 0.0;
    double e_max = 1.0;
};

ObjectiveBounds bounds_over(const std::vector<const SimTrace*>& traces);

/// Mean over iterations of normalize(makespan) + normalize(energy variance).
double objective(const SimTrace& trace, const ObjectiveBounds& b);

struct RunStats {
    double mean_makespan = 0.0;
    double std_makespan = 0.0;
    double total_makespan = 0.0;
    double mean_energy_variance = 0.0;
    double mean_objective = 0.0;
    double final_accuracy = 0.0;
    int runs = 0;

    nlohmann::json to_json() const;
};

struct BenchmarkSummary {
    std::map<std::string, RunStats> per_scheduler;
    nlohmann::json to_json() const;
};

/// Aggregates repeated runs per scheduler into comparable statistics.
/// Throws InvalidInput when the traces disagree on device count.
BenchmarkSummary compare_schedulers(
    const std::map<std::string, std::vector<SimTrace>>& traces);

/// Highest number of simultaneously in-flight transfers/aggregations at one
/// device, reconstructed from the event log.
int peak_concurrency(const SimTrace& trace, int device);

/// Peak over all devices except `except` (-1 for none).
int max_peak_concurrency(const SimTrace& trace, int num_devices, int except = -1);

} // namespace chainreduce
