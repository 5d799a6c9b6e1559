#pragma once

#include <vector>

#include "chainreduce/resource.hpp"

namespace chainreduce {

/// Directed aggregation task: sender ships its gradient to receiver, the
/// receiver folds it in and the sender is done for the iteration.
struct PairTask {
    int sender = -1;
    int receiver = -1;

    bool operator==(const PairTask&) const = default;
};

/// Chain-directed reduce schedule. Pairs within one round are
/// vertex-disjoint and may run concurrently. Deferred pairs involve a
/// device that was Busy at planning time; they run once it frees.
struct SchedulePlan {
    std::vector<std::vector<PairTask>> rounds;
    std::vector<PairTask> deferred;

    std::size_t pair_count() const;
    std::vector<PairTask> all_pairs() const;  // rounds in order, then deferred
    int survivor(int num_devices) const;      // the one device that never sends
};

/// Throws InvariantViolation unless the plan is a valid single-root reduce
/// over the given device ids.
void validate_plan(const SchedulePlan& plan, const std::vector<int>& devices);

/// Sequential chain d1->d2->...->dN, one pair per round, N-1 rounds.
SchedulePlan ring_plan(const std::vector<int>& devices);

/// Pairwise halving with odd carry-over, ceil(log2 N) rounds.
SchedulePlan tree_plan(const std::vector<int>& devices);

enum class Strategy { DGE, TGE, TDGE };

struct RLConfig {
    double alpha = -0.04;   // base per-selection reward
    double beta = 0.1;      // balance weight on n_agg
    double rho = -0.8;      // busy-selection penalty
    double epsilon0 = 1.0;
    double epsilon_new = 0.3;
    double decay = 0.99;    // multiplicative per-episode epsilon decay
    Strategy strategy = Strategy::TDGE;
    double phi = 0.0;       // threshold offset
    int max_epoch = 500;
    double discount = 0.95;
    double learn_rate = 1e-3;

    // value-function details
    int hidden = 64;
    int target_sync = 100;
    int replay_capacity = 10000;
    int batch_size = 32;

    void validate() const;
};

/// Battery-balance component of the exploration-switch threshold:
/// f(0)=f(1)=0, f(n) = beta*(n mod 2) + f(n/2).
double threshold_battery_term(int n, double beta);

/// Latency component, beta * log2(n).
double threshold_latency_term(int n, double beta);

/// T(N) = f(N) + g(N) - phi.
double threshold(int n, const RLConfig& cfg);

/// Scheduler MDP state. Selections alternate sender/receiver; every device
/// sends exactly once, so a full reduce takes 2(N-1) steps.
struct SchedEnvState {
    std::vector<DeviceState> states;
    std::vector<bool> busy_snapshot;  // availability at planning time, fixed
    std::vector<int> n_agg;
    int t = 0;
    int pending_sender = -1;
    std::vector<PairTask> pairs;
    std::vector<bool> pair_deferred;

    int n() const { return static_cast<int>(states.size()); }
    static SchedEnvState initial(const std::vector<bool>& busy);
};

struct StepResult {
    SchedEnvState next;
    double reward = 0.0;
    bool terminal = false;
};

StepResult env_step(const SchedEnvState& state, int action, const RLConfig& cfg);

std::vector<int> valid_actions(const SchedEnvState& state);

/// Dense encoding for the value net: per device, one-hot state (5),
/// normalized n_agg, pending-sender flag.
std::vector<double> encode_state(const SchedEnvState& state);

/// Group an ordered pair sequence into a SchedulePlan: consecutive
/// vertex-disjoint non-deferred pairs share a round, deferred pairs are
/// split out in order.
SchedulePlan pack_plan(const std::vector<PairTask>& pairs,
                       const std::vector<bool>& deferred);

} // namespace chainreduce
