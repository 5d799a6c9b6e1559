#include "chainreduce/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace chainreduce {

ObjectiveBounds bounds_over(const std::vector<const SimTrace*>& traces) {
    ObjectiveBounds b;
    bool first = true;
    for (const SimTrace* t : traces) {
        for (const auto& r : t->iterations) {
            if (first) {
                b.t_min = b.t_max = r.makespan;
                b.e_min = b.e_max = r.energy_variance;
                first = false;
            } else {
                b.t_min = std::min(b.t_min, r.makespan);
                b.t_max = std::max(b.t_max, r.makespan);
                b.e_min = std::min(b.e_min, r.energy_variance);
                b.e_max = std::max(b.e_max, r.energy_variance);
            }
        }
    }
    if (first) throw InvalidInput("bounds_over: no iterations in any trace");
    // keep normalize() well-defined on degenerate ranges
    if (b.t_max <= b.t_min) b.t_max = b.t_min + 1.0;
    if (b.e_max <= b.e_min) b.e_max = b.e_min + 1.0;
    return b;
}

double objective(const SimTrace& trace, const ObjectiveBounds& b) {
    if (trace.iterations.empty()) throw InvalidInput("objective: empty trace");
    double acc = 0.0;
    for (const auto& r : trace.iterations) {
        acc += normalize(r.makespan, b.t_min, b.t_max) +
               normalize(r.energy_variance, b.e_min, b.e_max);
    }
    return acc / static_cast<double>(trace.iterations.size());
}

nlohmann::json RunStats::to_json() const {
    return {{"mean_makespan", mean_makespan},
            {"std_makespan", std_makespan},
            {"total_makespan", total_makespan},
            {"mean_energy_variance", mean_energy_variance},
            {"mean_objective", mean_objective},
            {"final_accuracy", final_accuracy},
            {"runs", runs}};
}

nlohmann::json BenchmarkSummary::to_json() const {
    nlohmann::json j;
    for (const auto& [name, s] : per_scheduler) j[name] = s.to_json();
    return j;
}

BenchmarkSummary compare_schedulers(
    const std::map<std::string, std::vector<SimTrace>>& traces) {
    if (traces.empty()) throw InvalidInput("compare_schedulers: nothing to compare");
    int devices = -1;
    std::vector<const SimTrace*> all;
    for (const auto& [name, runs] : traces) {
        if (runs.empty())
            throw InvalidInput("compare_schedulers: no runs for " + name);
        for (const auto& t : runs) {
            const int n = t.config_snapshot.value("num_devices", -1);
            if (devices < 0) devices = n;
            if (n != devices)
                throw InvalidInput("compare_schedulers: device counts differ");
            all.push_back(&t);
        }
    }
    const ObjectiveBounds b = bounds_over(all);

    BenchmarkSummary out;
    for (const auto& [name, runs] : traces) {
        RunStats s;
        std::vector<double> makespans;
        for (const auto& t : runs) {
            double total = 0.0, evar = 0.0;
            for (const auto& r : t.iterations) {
                makespans.push_back(r.makespan);
                total += r.makespan;
                evar += r.energy_variance;
            }
            s.total_makespan += total;
            s.mean_energy_variance += evar / std::max<std::size_t>(1, t.iterations.size());
            s.mean_objective += objective(t, b);
            s.final_accuracy += t.final_accuracy;
        }
        const double n = static_cast<double>(makespans.size());
        for (double m : makespans) s.mean_makespan += m;
        s.mean_makespan /= std::max(1.0, n);
        for (double m : makespans) {
            const double d = m - s.mean_makespan;
            s.std_makespan += d * d;
        }
        s.std_makespan = std::sqrt(s.std_makespan / std::max(1.0, n));
        const double r = static_cast<double>(runs.size());
        s.total_makespan /= r;
        s.mean_energy_variance /= r;
        s.mean_objective /= r;
        s.final_accuracy /= r;
        s.runs = static_cast<int>(runs.size());
        out.per_scheduler[name] = s;
    }
    return out;
}

int peak_concurrency(const SimTrace& trace, int device) {
    // sender is in flight over [t0, MsgArrive]; receiver over [t0, AggDone]
    std::vector<std::pair<double, int>> marks;
    for (const auto& e : trace.events) {
        int owner = -1;
        if (e.kind == EventKind::MsgArrive) owner = e.peer;
        else if (e.kind == EventKind::AggDone) owner = e.device;
        else continue;
        if (owner != device) continue;
        marks.emplace_back(e.t0, +1);
        marks.emplace_back(e.time, -1);
    }
    std::sort(marks.begin(), marks.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;  // close before open at the same instant
    });
    int cur = 0, peak = 0;
    for (const auto& [t, d] : marks) {
        cur += d;
        peak = std::max(peak, cur);
    }
    return peak;
}

int max_peak_concurrency(const SimTrace& trace, int num_devices, int except) {
    int peak = 0;
    for (int d = 0; d < num_devices; ++d) {
        if (d == except) continue;
        peak = std::max(peak, peak_concurrency(trace, d));
    }
    return peak;
}

} // namespace chainreduce
