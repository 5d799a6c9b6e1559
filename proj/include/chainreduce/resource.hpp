#pragma once

#include <string>
#include <vector>

#include "chainreduce/errors.hpp"

namespace chainreduce {

enum class DeviceState { Free, Busy, Send, Get, Done };

const char* to_string(DeviceState s);

/// Legal transitions per the scheduler state machine: Free->{Busy,Send,Get},
/// Busy->Free, Send->Done, Get->Free; Done only resets to Free at the start
/// of the next iteration.
bool legal_transition(DeviceState from, DeviceState to);

struct ResourceReport {
    double free_memory_mb = 1024.0;
    double battery_pct = 100.0;
    bool in_use = false;
    bool charging = false;
    double cpu_pct = 0.0;
    double timestamp_ms = 0.0;
};

/// Thresholds for the Busy/Free decision. The paper gives no numeric rule;
/// these are declared stand-ins and all configurable.
struct BusyPolicy {
    double cpu_threshold = 80.0;
    double battery_floor = 15.0;
    double memory_floor_mb = 64.0;
};

DeviceState classify(const ResourceReport& report, const BusyPolicy& policy);

struct EnergyCosts {
    double train_per_ms = 0.05;
    double per_aggregation = 0.8;
    double per_byte = 1e-4;
    double per_report = 1e-3;
};

struct EnergyMeter {
    double train = 0.0;
    double aggregate_compute = 0.0;
    double send = 0.0;
    double receive = 0.0;
    double report = 0.0;

    double consumed() const { return train + aggregate_compute + send + receive + report; }
};

struct EnergyEvent {
    enum class Kind { Train, Aggregate, Send, Receive, Report };
    Kind kind;
    double dt_ms = 0.0;
    double bytes = 0.0;

    static EnergyEvent train_for(double dt) { return {Kind::Train, dt, 0.0}; }
    static EnergyEvent aggregate() { return {Kind::Aggregate, 0.0, 0.0}; }
    static EnergyEvent send_bytes(double b) { return {Kind::Send, 0.0, b}; }
    static EnergyEvent receive_bytes(double b) { return {Kind::Receive, 0.0, b}; }
    static EnergyEvent report() { return {Kind::Report, 0.0, 0.0}; }
};

EnergyMeter charge_energy(EnergyMeter meter, const EnergyEvent& event,
                          const EnergyCosts& costs);

/// Population variance of total consumption, (1/N) * sum (E_i - mu)^2.
double energy_variance(const std::vector<EnergyMeter>& meters);

/// (x - xmin) / (xmax - xmin), clamped to [0, 1].
double normalize(double x, double xmin, double xmax);

struct ResourceLimits {
    double max_memory_mb = 512.0;
    double max_battery = 3500.0;
};

/// Seeded two-state toggle process driving Busy/Free dynamics in the
/// simulator, capped so at most floor(N/2) devices are Busy at once.
struct BusyProcessParams {
    bool enabled = false;
    double mean_busy_ms = 300.0;
    double mean_free_ms = 500.0;
};

} // namespace chainreduce
