#include "chainreduce/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

namespace chainreduce {

std::size_t SchedulePlan::pair_count() const {
    std::size_t n = deferred.size();
    for (const auto& r : rounds) n += r.size();
    return n;
}

std::vector<PairTask> SchedulePlan::all_pairs() const {
    std::vector<PairTask> out;
    for (const auto& r : rounds) out.insert(out.end(), r.begin(), r.end());
    out.insert(out.end(), deferred.begin(), deferred.end());
    return out;
}

int SchedulePlan::survivor(int num_devices) const {
    std::vector<bool> sent(static_cast<std::size_t>(num_devices), false);
    for (const auto& p : all_pairs()) sent.at(static_cast<std::size_t>(p.sender)) = true;
    int surv = -1;
    for (int d = 0; d < num_devices; ++d) {
        if (!sent[static_cast<std::size_t>(d)]) {
            if (surv >= 0) throw InvariantViolation("plan has multiple survivors");
            surv = d;
        }
    }
    if (surv < 0) throw InvariantViolation("plan has no survivor");
    return surv;
}

void validate_plan(const SchedulePlan& plan, const std::vector<int>& devices) {
    const auto pairs = plan.all_pairs();
    if (pairs.size() + 1 != devices.size())
        throw InvariantViolation("plan must contain exactly N-1 pairs");
    std::set<int> ids(devices.begin(), devices.end());
    std::set<int> senders;
    for (const auto& p : pairs) {
        if (!ids.count(p.sender) || !ids.count(p.receiver))
            throw InvariantViolation("plan references unknown device");
        if (p.sender == p.receiver) throw InvariantViolation("self-pair in plan");
        if (!senders.insert(p.sender).second)
            throw InvariantViolation("device sends more than once");
    }
    for (const auto& round : plan.rounds) {
        std::set<int> seen;
        for (const auto& p : round) {
            if (!seen.insert(p.sender).second || !seen.insert(p.receiver).second)
                throw InvariantViolation("round pairs are not vertex-disjoint");
        }
    }
    // every sender forwards along a path that must end at the survivor;
    // a cycle would orphan the gradients on it
    std::map<int, int> send_target;
    for (const auto& p : pairs) send_target[p.sender] = p.receiver;
    int surv = -1;
    for (int d : devices) {
        if (senders.count(d)) continue;
        if (surv != -1) throw InvariantViolation("plan has multiple survivors");
        surv = d;
    }
    if (surv == -1) throw InvariantViolation("plan has no survivor");
    for (int d : devices) {
        int cur = d;
        std::size_t hops = 0;
        while (cur != surv) {
            auto it = send_target.find(cur);
            if (it == send_target.end() || ++hops > devices.size())
                throw InvariantViolation("plan does not reduce to a single root");
            cur = it->second;
        }
    }
}

SchedulePlan ring_plan(const std::vector<int>& devices) {
    if (devices.size() < 2) throw InvalidInput("ring_plan: need at least 2 devices");
    SchedulePlan plan;
    for (std::size_t k = 0; k + 1 < devices.size(); ++k) {
        plan.rounds.push_back({PairTask{devices[k], devices[k + 1]}});
    }
    return plan;
}

SchedulePlan tree_plan(const std::vector<int>& devices) {
    if (devices.size() < 2) throw InvalidInput("tree_plan: need at least 2 devices");
    SchedulePlan plan;
    std::vector<int> survivors = devices;
    while (survivors.size() > 1) {
        std::vector<PairTask> round;
        std::vector<int> next;
        std::size_t k = 0;
        for (; k + 1 < survivors.size(); k += 2) {
            round.push_back(PairTask{survivors[k], survivors[k + 1]});
            next.push_back(survivors[k + 1]);
        }
        if (k < survivors.size()) next.push_back(survivors[k]);  // odd carry-over
        plan.rounds.push_back(std::move(round));
        survivors = std::move(next);
    }
    return plan;
}

void RLConfig::validate() const {
    if (rho >= 0.0) throw InvalidInput("RLConfig: rho must be negative");
    if (decay <= 0.0 || decay >= 1.0) throw InvalidInput("RLConfig: decay must be in (0,1)");
    if (epsilon0 < 0.0 || epsilon0 > 1.0 || epsilon_new < 0.0 || epsilon_new > 1.0)
        throw InvalidInput("RLConfig: epsilon values must be in [0,1]");
    if (max_epoch < 1) throw InvalidInput("RLConfig: max_epoch must be >= 1");
}

double threshold_battery_term(int n, double beta) {
    double acc = 0.0;
    while (n > 1) {
        acc += beta * (n % 2);
        n /= 2;
    }
    return acc;
}

double threshold_latency_term(int n, double beta) {
    return beta * std::log2(static_cast<double>(n));
}

double threshold(int n, const RLConfig& cfg) {
    if (n < 2) throw InvalidInput("threshold: n must be >= 2");
    return threshold_battery_term(n, cfg.beta) + threshold_latency_term(n, cfg.beta) -
           cfg.phi;
}

SchedEnvState SchedEnvState::initial(const std::vector<bool>& busy) {
    SchedEnvState s;
    s.busy_snapshot = busy;
    s.states.reserve(busy.size());
    for (bool b : busy) s.states.push_back(b ? DeviceState::Busy : DeviceState::Free);
    s.n_agg.assign(busy.size(), 0);
    return s;
}

StepResult env_step(const SchedEnvState& state, int action, const RLConfig& cfg) {
    StepResult res;
    res.next = state;
    SchedEnvState& s = res.next;
    const int n = s.n();
    const double limit = 2.0 * (n - 1);

    auto invalid = [&]() {
        res.reward = -1.0;
        res.terminal = true;
        return res;
    };

    if (action < 0 || action >= n) return invalid();
    if (s.t >= static_cast<int>(limit)) return invalid();  // exceeds limits
    const DeviceState ds = s.states[static_cast<std::size_t>(action)];
    if (ds == DeviceState::Send || ds == DeviceState::Get || ds == DeviceState::Done)
        return invalid();  // repeat / invalid selection

    const bool busy = ds == DeviceState::Busy;
    if (busy) {
        res.reward = cfg.rho + static_cast<double>(s.t) * cfg.rho / limit;
    }

    if (s.pending_sender < 0) {
        if (!busy)
            res.reward = cfg.alpha + cfg.beta * s.n_agg[static_cast<std::size_t>(action)];
        s.states[static_cast<std::size_t>(action)] = DeviceState::Send;
        s.pending_sender = action;
    } else {
        if (!busy)
            res.reward = cfg.alpha - cfg.beta * s.n_agg[static_cast<std::size_t>(action)];
        const int sender = s.pending_sender;
        s.pairs.push_back(PairTask{sender, action});
        const bool deferred = busy || s.busy_snapshot[static_cast<std::size_t>(sender)];
        s.pair_deferred.push_back(deferred);
        s.states[static_cast<std::size_t>(sender)] = DeviceState::Done;
        // receiver completes its Get and returns to its availability state
        s.states[static_cast<std::size_t>(action)] =
            s.busy_snapshot[static_cast<std::size_t>(action)] ? DeviceState::Busy
                                                              : DeviceState::Free;
        s.n_agg[static_cast<std::size_t>(action)] += 1;
        s.pending_sender = -1;
        if (static_cast<int>(s.pairs.size()) == n - 1) {
            res.reward = 1.0;  // completed the reduce
            res.terminal = true;
        }
    }
    s.t += 1;
    return res;
}

std::vector<int> valid_actions(const SchedEnvState& state) {
    std::vector<int> out;
    for (int d = 0; d < state.n(); ++d) {
        const DeviceState ds = state.states[static_cast<std::size_t>(d)];
        if (ds == DeviceState::Free || ds == DeviceState::Busy) out.push_back(d);
    }
    return out;
}

std::vector<double> encode_state(const SchedEnvState& state) {
    const int n = state.n();
    std::vector<double> x(static_cast<std::size_t>(7 * n), 0.0);
    for (int d = 0; d < n; ++d) {
        const std::size_t base = static_cast<std::size_t>(7 * d);
        x[base + static_cast<std::size_t>(state.states[static_cast<std::size_t>(d)])] = 1.0;
        x[base + 5] = static_cast<double>(state.n_agg[static_cast<std::size_t>(d)]) / n;
        x[base + 6] = state.pending_sender == d ? 1.0 : 0.0;
    }
    return x;
}

SchedulePlan pack_plan(const std::vector<PairTask>& pairs,
                       const std::vector<bool>& deferred) {
    SchedulePlan plan;
    std::set<int> used;
    std::vector<PairTask> round;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (k < deferred.size() && deferred[k]) {
            plan.deferred.push_back(pairs[k]);
            continue;
        }
        if (used.count(pairs[k].sender) || used.count(pairs[k].receiver)) {
            plan.rounds.push_back(round);
            round.clear();
            used.clear();
        }
        round.push_back(pairs[k]);
        used.insert(pairs[k].sender);
        used.insert(pairs[k].receiver);
    }
    if (!round.empty()) plan.rounds.push_back(round);
    return plan;
}

} // namespace chainreduce
