#include "chainreduce/resource.hpp"

namespace chainreduce {

const char* to_string(DeviceState s) {
    switch (s) {
        case DeviceState::Free: return "Free";
        case DeviceState::Busy: return "Busy";
        case DeviceState::Send: return "Send";
        case DeviceState::Get: return "Get";
        case DeviceState::Done: return "Done";
    }
    return "?";
}

bool legal_transition(DeviceState from, DeviceState to) {
    switch (from) {
        case DeviceState::Free:
            return to == DeviceState::Busy || to == DeviceState::Send ||
                   to == DeviceState::Get;
        case DeviceState::Busy:
            return to == DeviceState::Free;
        case DeviceState::Send:
            return to == DeviceState::Done;
        case DeviceState::Get:
            return to == DeviceState::Free;
        case DeviceState::Done:
            return to == DeviceState::Free;  // iteration reset only
    }
    return false;
}

DeviceState classify(const ResourceReport& report, const BusyPolicy& policy) {
    if (report.in_use) return DeviceState::Busy;
    if (report.cpu_pct > policy.cpu_threshold) return DeviceState::Busy;
    if (report.battery_pct < policy.battery_floor && !report.charging)
        return DeviceState::Busy;
    if (report.free_memory_mb < policy.memory_floor_mb) return DeviceState::Busy;
    return DeviceState::Free;
}

EnergyMeter charge_energy(EnergyMeter meter, const EnergyEvent& event,
                          const EnergyCosts& costs) {
    if (event.dt_ms < 0.0 || event.bytes < 0.0)
        throw InvalidInput("charge_energy: negative duration or byte count");
    switch (event.kind) {
        case EnergyEvent::Kind::Train:
            meter.train += costs.train_per_ms * event.dt_ms;
            break;
        case EnergyEvent::Kind::Aggregate:
            meter.aggregate_compute += costs.per_aggregation;
            break;
        case EnergyEvent::Kind::Send:
            meter.send += costs.per_byte * event.bytes;
            break;
        case EnergyEvent::Kind::Receive:
            meter.receive += costs.per_byte * event.bytes;
            break;
        case EnergyEvent::Kind::Report:
            meter.report += costs.per_report;
            break;
    }
    return meter;
}

double energy_variance(const std::vector<EnergyMeter>& meters) {
    if (meters.empty()) throw InvalidInput("energy_variance: empty meter list");
    double mu = 0.0;
    for (const auto& m : meters) mu += m.consumed();
    mu /= static_cast<double>(meters.size());
    double var = 0.0;
    for (const auto& m : meters) {
        const double d = m.consumed() - mu;
        var += d * d;
    }
    return var / static_cast<double>(meters.size());
}

double normalize(double x, double xmin, double xmax) {
    if (xmax <= xmin) throw InvalidInput("normalize: xmax must exceed xmin");
    const double v = (x - xmin) / (xmax - xmin);
    if (v < 0.0) return 0.0;
    if (v > 1.0) return 1.0;
    return v;
}

} // namespace chainreduce
