#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chainreduce/param.hpp"
#include "chainreduce/resource.hpp"
#include "chainreduce/rl_agent.hpp"
#include "chainreduce/scheduler.hpp"
#include "chainreduce/toy_train.hpp"

namespace chainreduce {

enum class SchedulerKind { Central, Chain, Neighbor, Ring, Tree };

SchedulerKind scheduler_kind_from_string(const std::string& s);
const char* to_string(SchedulerKind k);

struct FaultAction {
    double time_ms = 0.0;
    int device = -1;
    bool drop = true;  // false = reconnect
};

struct SimConfig {
    int num_devices = 4;
    std::uint64_t seed = 1;

    // channels
    double control_latency_ms = 5.0;
    double data_base_latency_ms = 20.0;
    double data_bandwidth = 400.0;  // bytes per ms
    double report_period_ms = 100.0;
    double agg_compute_ms = 5.0;

    // local training time distribution
    double train_time_mean_ms = 50.0;
    double train_time_jitter_ms = 10.0;

    BusyProcessParams busy;
    EnergyCosts costs;
    BusyPolicy busy_policy;
    std::vector<FaultAction> faults;

    // synthetic task
    int num_classes = 2;
    int per_class = 100;
    int feature_dim = 2;
    double spread = 0.5;
    int hidden_dim = 8;

    // chain scheduler budgets
    RLConfig rl;
    int chain_train_epochs = 200;
    int relearn_slot_epochs = 30;

    void validate() const;
    nlohmann::json to_json() const;
    static SimConfig from_json(const nlohmann::json& j);
};

enum class EventKind { TrainEnd, MsgArrive, ReportDue, BusyToggle, AggDone, BroadcastHop, Fault };

const char* to_string(EventKind k);

struct SimEvent {
    double time = 0.0;
    EventKind kind = EventKind::TrainEnd;
    int device = -1;   // primary device (receiver for transfers)
    int peer = -1;     // counterpart (sender for transfers)
    double t0 = 0.0;   // start of the activity that ends at `time`
    double bytes = 0.0;
    std::uint64_t seq = 0;
    std::string detail;
};

struct IterationRecord {
    int iteration = 0;
    int survivor = -1;
    int live_count = 0;
    double survivor_theta = 0.0;
    double t_tr = 0.0;
    double t_a = 0.0;
    double t_b = 0.0;
    double agg_makespan = 0.0;  // span of the aggregation phase
    double makespan = 0.0;      // t_tr + agg_makespan
    double energy_variance = 0.0;
    double train_loss = 0.0;
};

struct Checkpoint {
    int device = -1;
    int iteration = 0;
    ParamVector weights;
    double theta = 1.0;
    std::uint64_t rng_state = 0;

    nlohmann::json to_json() const;
    static Checkpoint from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

struct SimTrace {
    std::vector<SimEvent> events;
    std::vector<IterationRecord> iterations;
    std::vector<EnergyMeter> meters;
    std::vector<std::pair<int, ResourceReport>> report_log;
    std::vector<std::vector<double>> epoch_weights;  // global weights per epoch end
    std::vector<std::vector<double>> final_device_weights;  // replica per device
    std::vector<bool> final_live;
    double final_accuracy = 0.0;
    double final_train_loss = 0.0;
    nlohmann::json config_snapshot;

    void export_events_csv(const std::string& path) const;
    void export_resource_csv(const std::string& path) const;
    nlohmann::json metrics_json() const;
};

struct BroadcastHop {
    int round = 0;
    int from = -1;
    int to = -1;
};

/// Binomial forwarding tree over the live devices, sorted so better-resourced
/// devices carry forwarding duties. The root performs ceil(log2 N) direct
/// sends; every other device receives exactly once.
std::vector<BroadcastHop> binomial_broadcast_order(
    const std::vector<int>& live, int root,
    const std::vector<ResourceReport>& latest_reports);

class MeshSimulator {
public:
    MeshSimulator(SimConfig cfg, TrainHyper hyper);

    /// Full training run; `agent` is only consulted for SchedulerKind::Chain
    /// and is trained on the initial busy snapshot when null.
    SimTrace run(SchedulerKind kind, DqnAgent* agent = nullptr);

private:
    struct Impl;
    SimConfig cfg_;
    TrainHyper hyper_;
};

SimTrace run_experiment(const SimConfig& cfg, const TrainHyper& hyper, SchedulerKind kind,
                        DqnAgent* agent = nullptr);

/// Message payload size for one gradient exchange.
double gradient_message_bytes(std::size_t param_count);

} // namespace chainreduce
