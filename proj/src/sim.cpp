#include "chainreduce/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>

namespace chainreduce {

SchedulerKind scheduler_kind_from_string(const std::string& s) {
    if (s == "central") return SchedulerKind::Central;
    if (s == "chain") return SchedulerKind::Chain;
    if (s == "neighbor") return SchedulerKind::Neighbor;
    if (s == "ring") return SchedulerKind::Ring;
    if (s == "tree") return SchedulerKind::Tree;
    throw InvalidInput("unknown scheduler kind: " + s);
}

const char* to_string(SchedulerKind k) {
    switch (k) {
        case SchedulerKind::Central: return "central";
        case SchedulerKind::Chain: return "chain";
        case SchedulerKind::Neighbor: return "neighbor";
        case SchedulerKind::Ring: return "ring";
        case SchedulerKind::Tree: return "tree";
    }
    return "?";
}

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::TrainEnd: return "TrainEnd";
        case EventKind::MsgArrive: return "MsgArrive";
        case EventKind::ReportDue: return "ReportDue";
        case EventKind::BusyToggle: return "BusyToggle";
        case EventKind::AggDone: return "AggDone";
        case EventKind::BroadcastHop: return "BroadcastHop";
        case EventKind::Fault: return "Fault";
    }
    return "?";
}

void SimConfig::validate() const {
    if (num_devices < 2) throw InvalidInput("SimConfig: num_devices must be >= 2");
    if (control_latency_ms <= 0 || data_base_latency_ms <= 0 || data_bandwidth <= 0 ||
        report_period_ms <= 0)
        throw InvalidInput("SimConfig: latencies and bandwidth must be positive");
}

nlohmann::json SimConfig::to_json() const {
    nlohmann::json faults_j = nlohmann::json::array();
    for (const auto& f : faults)
        faults_j.push_back({{"time_ms", f.time_ms}, {"device", f.device}, {"drop", f.drop}});
    return {{"num_devices", num_devices},
            {"seed", seed},
            {"control_latency_ms", control_latency_ms},
            {"data_base_latency_ms", data_base_latency_ms},
            {"data_bandwidth", data_bandwidth},
            {"report_period_ms", report_period_ms},
            {"agg_compute_ms", agg_compute_ms},
            {"train_time_mean_ms", train_time_mean_ms},
            {"train_time_jitter_ms", train_time_jitter_ms},
            {"busy",
             {{"enabled", busy.enabled},
              {"mean_busy_ms", busy.mean_busy_ms},
              {"mean_free_ms", busy.mean_free_ms}}},
            {"costs",
             {{"train_per_ms", costs.train_per_ms},
              {"per_aggregation", costs.per_aggregation},
              {"per_byte", costs.per_byte},
              {"per_report", costs.per_report}}},
            {"faults", faults_j},
            {"num_classes", num_classes},
            {"per_class", per_class},
            {"feature_dim", feature_dim},
            {"spread", spread},
            {"hidden_dim", hidden_dim},
            {"chain_train_epochs", chain_train_epochs},
            {"relearn_slot_epochs", relearn_slot_epochs}};
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
    SimConfig c;
    c.num_devices = j.value("num_devices", c.num_devices);
    c.seed = j.value("seed", c.seed);
    c.control_latency_ms = j.value("control_latency_ms", c.control_latency_ms);
    c.data_base_latency_ms = j.value("data_base_latency_ms", c.data_base_latency_ms);
    c.data_bandwidth = j.value("data_bandwidth", c.data_bandwidth);
    c.report_period_ms = j.value("report_period_ms", c.report_period_ms);
    c.agg_compute_ms = j.value("agg_compute_ms", c.agg_compute_ms);
    c.train_time_mean_ms = j.value("train_time_mean_ms", c.train_time_mean_ms);
    c.train_time_jitter_ms = j.value("train_time_jitter_ms", c.train_time_jitter_ms);
    if (j.contains("busy")) {
        const auto& b = j.at("busy");
        c.busy.enabled = b.value("enabled", c.busy.enabled);
        c.busy.mean_busy_ms = b.value("mean_busy_ms", c.busy.mean_busy_ms);
        c.busy.mean_free_ms = b.value("mean_free_ms", c.busy.mean_free_ms);
    }
    if (j.contains("costs")) {
        const auto& e = j.at("costs");
        c.costs.train_per_ms = e.value("train_per_ms", c.costs.train_per_ms);
        c.costs.per_aggregation = e.value("per_aggregation", c.costs.per_aggregation);
        c.costs.per_byte = e.value("per_byte", c.costs.per_byte);
        c.costs.per_report = e.value("per_report", c.costs.per_report);
    }
    if (j.contains("faults")) {
        for (const auto& f : j.at("faults")) {
            c.faults.push_back(FaultAction{f.at("time_ms").get<double>(),
                                           f.at("device").get<int>(),
                                           f.at("drop").get<bool>()});
        }
    }
    c.num_classes = j.value("num_classes", c.num_classes);
    c.per_class = j.value("per_class", c.per_class);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.spread = j.value("spread", c.spread);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.chain_train_epochs = j.value("chain_train_epochs", c.chain_train_epochs);
    c.relearn_slot_epochs = j.value("relearn_slot_epochs", c.relearn_slot_epochs);
    return c;
}

nlohmann::json Checkpoint::to_json() const {
    return {{"format", "chainreduce-checkpoint-v1"},
            {"device", device},
            {"iteration", iteration},
            {"weights", weights.values},
            {"theta", theta},
            {"rng_state", rng_state}};
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "chainreduce-checkpoint-v1")
        throw InvalidInput("unrecognized checkpoint format");
    Checkpoint c;
    c.device = j.at("device").get<int>();
    c.iteration = j.at("iteration").get<int>();
    c.weights = ParamVector(j.at("weights").get<std::vector<double>>(),
                            j.at("theta").get<double>());
    c.theta = j.at("theta").get<double>();
    c.rng_state = j.at("rng_state").get<std::uint64_t>();
    return c;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw InvalidInput("cannot write checkpoint: " + path);
    f << to_json().dump() << "\n";
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("cannot read checkpoint: " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

void SimTrace::export_events_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw InvalidInput("cannot write events csv: " + path);
    f.precision(12);
    f << "time,kind,device,peer,t0,bytes,detail\n";
    for (const auto& e : events) {
        f << e.time << "," << to_string(e.kind) << "," << e.device << "," << e.peer << ","
          << e.t0 << "," << e.bytes << "," << e.detail << "\n";
    }
}

void SimTrace::export_resource_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw InvalidInput("cannot write resource csv: " + path);
    f.precision(12);
    f << "time,device,state,battery,cpu,memory\n";
    for (const auto& [dev, r] : report_log) {
        f << r.timestamp_ms << "," << dev << "," << (r.in_use ? "Busy" : "Free") << ","
          << r.battery_pct << "," << r.cpu_pct << "," << r.free_memory_mb << "\n";
    }
}

nlohmann::json SimTrace::metrics_json() const {
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& r : iterations) {
        iters.push_back({{"iteration", r.iteration},
                         {"survivor", r.survivor},
                         {"live_count", r.live_count},
                         {"survivor_theta", r.survivor_theta},
                         {"t_tr", r.t_tr},
                         {"t_a", r.t_a},
                         {"t_b", r.t_b},
                         {"agg_makespan", r.agg_makespan},
                         {"makespan", r.makespan},
                         {"energy_variance", r.energy_variance},
                         {"train_loss", r.train_loss}});
    }
    nlohmann::json meters_j = nlohmann::json::array();
    for (const auto& m : meters) {
        meters_j.push_back({{"train", m.train},
                            {"aggregate_compute", m.aggregate_compute},
                            {"send", m.send},
                            {"receive", m.receive},
                            {"report", m.report},
                            {"consumed", m.consumed()}});
    }
    return {{"iterations", iters},
            {"meters", meters_j},
            {"final_accuracy", final_accuracy},
            {"final_train_loss", final_train_loss},
            {"config", config_snapshot}};
}

double gradient_message_bytes(std::size_t param_count) {
    return static_cast<double>(param_count) * 8.0 + 64.0;
}

std::vector<BroadcastHop> binomial_broadcast_order(
    const std::vector<int>& live, int root,
    const std::vector<ResourceReport>& latest_reports) {
    if (live.empty()) throw InvalidInput("broadcast: no live devices");
    if (std::find(live.begin(), live.end(), root) == live.end())
        throw InvalidInput("broadcast: root is not live");
    // better-resourced devices earlier => they carry forwarding duties
    std::vector<int> order;
    for (int d : live)
        if (d != root) order.push_back(d);
    auto key = [&](int d) {
        if (static_cast<std::size_t>(d) < latest_reports.size()) {
            const auto& r = latest_reports[static_cast<std::size_t>(d)];
            return std::make_tuple(-r.battery_pct, -r.free_memory_mb, r.cpu_pct, d);
        }
        return std::make_tuple(0.0, 0.0, 0.0, d);
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return key(a) < key(b); });
    order.insert(order.begin(), root);

    std::vector<BroadcastHop> hops;
    const std::size_t n = order.size();
    std::size_t span = 1;
    int round = 0;
    while (span < n) {
        for (std::size_t i = 0; i < span && i + span < n; ++i) {
            hops.push_back(BroadcastHop{round, order[i], order[i + span]});
        }
        span *= 2;
        ++round;
    }
    return hops;
}

// ---------------------------------------------------------------------------
// Simulator internals

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + salt * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct DeviceSim {
    int id = -1;
    bool live = true;
    bool synced = true;  // false between reconnect and the next broadcast
    bool busy = false;
    DeviceState state = DeviceState::Free;
    bool ever_dropped = false;
    EnergyMeter meter;
    ParamVector weights;
    ParamVector grad;     // this iteration's local gradient
    ParamVector working;  // accumulation value during the reduce
    std::vector<Sample> shard;
    double train_mean_ms = 50.0;
    std::mt19937_64 rng;
    ResourceReport last_report;
    std::optional<Checkpoint> cp;
};

struct QueuedEvent {
    double time = 0.0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::TrainEnd;
    int device = -1;
    int peer = -1;
    double t0 = 0.0;
    double bytes = 0.0;
    int gen = 0;        // aggregation generation; stale pair events are ignored
    int pair_idx = -1;
    int fault_idx = -1;
    std::string detail;
};

struct QueueCmp {
    bool operator()(const QueuedEvent& a, const QueuedEvent& b) const {
        if (a.time != b.time) return a.time > b.time;
        return a.seq > b.seq;
    }
};

struct PairRt {
    PairTask p;
    bool deferred = false;
    bool started = false;
    bool done = false;
    int prereq_remaining = 0;
    double block_start = -1.0;
};

double union_length(std::vector<std::pair<double, double>> iv) {
    if (iv.empty()) return 0.0;
    std::sort(iv.begin(), iv.end());
    double total = 0.0, lo = iv[0].first, hi = iv[0].second;
    for (std::size_t k = 1; k < iv.size(); ++k) {
        if (iv[k].first > hi) {
            total += hi - lo;
            lo = iv[k].first;
            hi = iv[k].second;
        } else {
            hi = std::max(hi, iv[k].second);
        }
    }
    return total + (hi - lo);
}

class SimRunner {
public:
    SimRunner(SimConfig cfg, TrainHyper hyper) : cfg_(std::move(cfg)), hyper_(hyper) {
        cfg_.validate();
        validate_hyper(hyper_);
    }

    SimTrace run(SchedulerKind kind, DqnAgent* agent);

private:
    void set_state(DeviceSim& d, DeviceState to) {
        if (!legal_transition(d.state, to))
            throw InvariantViolation(std::string("illegal device state transition ") +
                                     to_string(d.state) + " -> " + to_string(to));
        d.state = to;
    }

    void log_event(EventKind kind, int device, int peer, double t0, double bytes,
                   const std::string& detail = "") {
        trace_.events.push_back(SimEvent{now_, kind, device, peer, t0, bytes,
                                         event_log_seq_++, detail});
    }

    void push(QueuedEvent e) {
        e.seq = queue_seq_++;
        pq_.push(std::move(e));
    }

    void charge(DeviceSim& d, const EnergyEvent& ev) {
        d.meter = charge_energy(d.meter, ev, cfg_.costs);
    }

    ResourceReport synthesize_report(DeviceSim& d) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        ResourceReport r;
        r.timestamp_ms = now_;
        r.in_use = d.busy;
        r.cpu_pct = d.busy ? 85.0 + 10.0 * u(d.rng) : 5.0 + 30.0 * u(d.rng);
        r.battery_pct = std::max(5.0, 100.0 - d.meter.consumed() * 0.02);
        r.free_memory_mb = 256.0 + 256.0 * u(d.rng);
        r.charging = false;
        return r;
    }

    int busy_count() const {
        int c = 0;
        for (const auto& d : devices_)
            if (d.live && d.busy) ++c;
        return c;
    }

    int busy_cap() const {
        int live = 0;
        for (const auto& d : devices_)
            if (d.live) ++live;
        return live / 2;
    }

    double draw_exp(DeviceSim& d, double mean) {
        std::exponential_distribution<double> e(1.0 / std::max(mean, 1e-6));
        return e(d.rng);
    }

    void schedule_busy_toggle(DeviceSim& d) {
        if (!cfg_.busy.enabled) return;
        const double mean = d.busy ? cfg_.busy.mean_busy_ms : cfg_.busy.mean_free_ms;
        push(QueuedEvent{now_ + draw_exp(d, mean), 0, EventKind::BusyToggle, d.id});
    }

    void handle_busy_toggle(const QueuedEvent& e) {
        DeviceSim& d = devices_[static_cast<std::size_t>(e.device)];
        if (!d.live || !cfg_.busy.enabled) return;
        if (d.busy) {
            d.busy = false;
            if (d.state == DeviceState::Busy) set_state(d, DeviceState::Free);
            log_event(EventKind::BusyToggle, d.id, -1, now_, 0, "free");
        } else if (d.state == DeviceState::Free && busy_count() < busy_cap()) {
            d.busy = true;
            set_state(d, DeviceState::Busy);
            log_event(EventKind::BusyToggle, d.id, -1, now_, 0, "busy");
        }
        schedule_busy_toggle(d);
    }

    void handle_report_due(const QueuedEvent& e) {
        DeviceSim& d = devices_[static_cast<std::size_t>(e.device)];
        if (d.live) {
            d.last_report = synthesize_report(d);
            charge(d, EnergyEvent::report());
            trace_.report_log.emplace_back(d.id, d.last_report);
            log_event(EventKind::ReportDue, d.id, -1, now_, 0);
        }
        push(QueuedEvent{now_ + cfg_.report_period_ms, 0, EventKind::ReportDue, e.device});
    }

    void handle_fault(const QueuedEvent& e) {
        const FaultAction& f = cfg_.faults[static_cast<std::size_t>(e.fault_idx)];
        DeviceSim& d = devices_[static_cast<std::size_t>(f.device)];
        if (f.drop) {
            if (!d.live) return;
            d.cp = Checkpoint{d.id, current_iteration_, d.weights, d.weights.theta,
                              d.rng()};
            d.live = false;
            d.ever_dropped = true;
            d.busy = false;
            d.state = DeviceState::Free;
            agg_dirty_ = true;
            log_event(EventKind::Fault, d.id, -1, now_, 0, "drop");
        } else {
            if (d.live && !d.ever_dropped) {
                log_event(EventKind::Fault, d.id, -1, now_, 0, "reconnect-noop");
                return;  // never dropped: warn and ignore
            }
            if (d.live) return;
            d.live = true;
            d.synced = false;  // waits for the next broadcast
            d.state = DeviceState::Free;
            schedule_busy_toggle(d);
            log_event(EventKind::Fault, d.id, -1, now_, 0, "reconnect");
        }
    }

    // Handles background events; returns false for events the caller owns.
    bool handle_background(const QueuedEvent& e) {
        switch (e.kind) {
            case EventKind::BusyToggle: handle_busy_toggle(e); return true;
            case EventKind::ReportDue: handle_report_due(e); return true;
            case EventKind::Fault: handle_fault(e); return true;
            default: return false;
        }
    }

    std::vector<int> contributors() const {
        std::vector<int> ids;
        for (const auto& d : devices_)
            if (d.live && d.synced) ids.push_back(d.id);
        return ids;
    }

    std::vector<int> live_ids() const {
        std::vector<int> ids;
        for (const auto& d : devices_)
            if (d.live) ids.push_back(d.id);
        return ids;
    }

    SchedulePlan fallback_tree_plan(const std::vector<int>& ids) const {
        std::vector<int> free_ids, busy_ids;
        for (int id : ids) {
            (devices_[static_cast<std::size_t>(id)].busy ? busy_ids : free_ids)
                .push_back(id);
        }
        SchedulePlan plan;
        int survivor;
        if (free_ids.size() >= 2) {
            plan = tree_plan(free_ids);
            std::set<int> senders;
            for (const auto& p : plan.all_pairs()) senders.insert(p.sender);
            survivor = -1;
            for (int id : free_ids)
                if (!senders.count(id)) survivor = id;
        } else {
            survivor = free_ids.empty() ? busy_ids.back() : free_ids.front();
            busy_ids.erase(std::remove(busy_ids.begin(), busy_ids.end(), survivor),
                           busy_ids.end());
        }
        for (int b : busy_ids) plan.deferred.push_back(PairTask{b, survivor});
        return plan;
    }

    SchedulePlan build_plan(SchedulerKind kind, const std::vector<int>& ids,
                            DqnAgent* agent) {
        switch (kind) {
            case SchedulerKind::Ring: return ring_plan(ids);
            case SchedulerKind::Tree: return tree_plan(ids);
            case SchedulerKind::Chain: {
                if (agent == nullptr ||
                    static_cast<int>(ids.size()) != agent->num_devices()) {
                    // after a drop the agent no longer matches the live set
                    return fallback_tree_plan(ids);
                }
                std::vector<bool> busy_bits;
                busy_bits.reserve(ids.size());
                for (int id : ids) {
                    DeviceSim& d = devices_[static_cast<std::size_t>(id)];
                    busy_bits.push_back(classify(synthesize_report(d),
                                                 cfg_.busy_policy) == DeviceState::Busy);
                }
                if (cfg_.relearn_slot_epochs > 0)
                    relearn_if_changed(prev_busy_, busy_bits, *agent,
                                       cfg_.relearn_slot_epochs);
                prev_busy_ = busy_bits;
                return plan_from_policy(*agent, busy_bits);
            }
            default:
                throw InvalidInput("build_plan: kind has no pair plan");
        }
    }

    // Executes a pair-aggregation plan; returns the survivor id.
    int run_pair_aggregation(SchedulerKind kind, DqnAgent* agent, double barrier,
                             std::vector<std::pair<double, double>>& ta,
                             std::vector<std::pair<double, double>>& tb);

    void run_central_aggregation(std::vector<std::pair<double, double>>& ta, int ma);
    void run_neighbor_aggregation(std::vector<std::pair<double, double>>& ta);

    void try_start_pairs();
    void finish_pair(std::size_t i);

    void run_broadcast(int root);

    SimConfig cfg_;
    TrainHyper hyper_;
    std::vector<DeviceSim> devices_;
    std::priority_queue<QueuedEvent, std::vector<QueuedEvent>, QueueCmp> pq_;
    std::uint64_t queue_seq_ = 0;
    std::uint64_t event_log_seq_ = 0;
    double now_ = 0.0;
    int current_iteration_ = 0;
    bool agg_dirty_ = false;
    int agg_gen_ = 0;
    std::vector<PairRt> pairs_;
    std::size_t pairs_done_ = 0;
    double msg_bytes_ = 0.0;
    std::vector<bool> prev_busy_;
    std::vector<std::pair<double, double>>* ta_ = nullptr;
    std::vector<std::pair<double, double>>* tb_ = nullptr;
    SimTrace trace_;
};

void SimRunner::try_start_pairs() {
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        PairRt& pr = pairs_[i];
        if (pr.started || pr.done || pr.prereq_remaining > 0) continue;
        DeviceSim& snd = devices_[static_cast<std::size_t>(pr.p.sender)];
        DeviceSim& rcv = devices_[static_cast<std::size_t>(pr.p.receiver)];
        const bool busy_blocked =
            snd.state == DeviceState::Busy || rcv.state == DeviceState::Busy;
        if (snd.state == DeviceState::Free && rcv.state == DeviceState::Free) {
            if (pr.block_start >= 0.0) {
                tb_->emplace_back(pr.block_start, now_);
                pr.block_start = -1.0;
            }
            pr.started = true;
            set_state(snd, DeviceState::Send);
            set_state(rcv, DeviceState::Get);
            const double arrive = now_ + cfg_.data_base_latency_ms + msg_bytes_ / cfg_.data_bandwidth;
            const double done = arrive + cfg_.agg_compute_ms;
            push(QueuedEvent{arrive, 0, EventKind::MsgArrive, pr.p.receiver, pr.p.sender,
                             now_, msg_bytes_, agg_gen_, static_cast<int>(i)});
            push(QueuedEvent{done, 0, EventKind::AggDone, pr.p.receiver, pr.p.sender,
                             now_, 0, agg_gen_, static_cast<int>(i)});
            charge(snd, EnergyEvent::send_bytes(msg_bytes_));
            charge(rcv, EnergyEvent::receive_bytes(msg_bytes_));
            charge(rcv, EnergyEvent::aggregate());
            ta_->emplace_back(now_, done);
        } else if (busy_blocked && pr.block_start < 0.0) {
            pr.block_start = now_;
        }
    }
}

void SimRunner::finish_pair(std::size_t i) {
    PairRt& pr = pairs_[i];
    DeviceSim& snd = devices_[static_cast<std::size_t>(pr.p.sender)];
    DeviceSim& rcv = devices_[static_cast<std::size_t>(pr.p.receiver)];
    rcv.working = pair_aggregate(rcv.working, snd.working);
    set_state(rcv, DeviceState::Free);
    if (rcv.busy) set_state(rcv, DeviceState::Busy);
    pr.done = true;
    ++pairs_done_;
    for (auto& other : pairs_) {
        if (!other.done && other.p.sender == pr.p.receiver) --other.prereq_remaining;
    }
}

int SimRunner::run_pair_aggregation(SchedulerKind kind, DqnAgent* agent, double barrier,
                                    std::vector<std::pair<double, double>>& ta,
                                    std::vector<std::pair<double, double>>& tb) {
    ta_ = &ta;
    tb_ = &tb;
    while (true) {  // restarts after a mid-aggregation drop
        agg_dirty_ = false;
        ++agg_gen_;
        const auto ids = contributors();
        if (ids.empty()) throw InvariantViolation("no live devices left");
        for (int id : ids) {
            DeviceSim& d = devices_[static_cast<std::size_t>(id)];
            d.working = d.grad;
            d.working.theta = 1.0;
            // a restart cancels in-flight transfers; non-busy devices rejoin Free
            if (d.state != DeviceState::Busy) d.state = DeviceState::Free;
        }
        if (ids.size() == 1) return ids.front();

        SchedulePlan plan = build_plan(kind, ids, agent);
        validate_plan(plan, ids);
        const auto flat = plan.all_pairs();
        pairs_.clear();
        pairs_done_ = 0;
        std::vector<bool> deferred_flags(flat.size(), false);
        for (std::size_t k = flat.size() - plan.deferred.size(); k < flat.size(); ++k)
            deferred_flags[k] = true;
        for (std::size_t k = 0; k < flat.size(); ++k) {
            PairRt pr;
            pr.p = flat[k];
            pr.deferred = deferred_flags[k];
            pairs_.push_back(pr);
        }
        for (auto& pr : pairs_) {
            for (const auto& other : pairs_) {
                if (other.p.receiver == pr.p.sender) ++pr.prereq_remaining;
            }
        }
        try_start_pairs();
        bool restarted = false;
        while (pairs_done_ < pairs_.size()) {
            if (pq_.empty()) throw InvariantViolation("event queue ran dry mid-reduce");
            QueuedEvent e = pq_.top();
            pq_.pop();
            now_ = std::max(now_, e.time);
            if (!handle_background(e)) {
                if (e.gen != agg_gen_) continue;  // cancelled by a restart
                PairRt& pr = pairs_[static_cast<std::size_t>(e.pair_idx)];
                if (e.kind == EventKind::MsgArrive) {
                    log_event(EventKind::MsgArrive, e.device, e.peer, e.t0, e.bytes);
                    set_state(devices_[static_cast<std::size_t>(pr.p.sender)],
                              DeviceState::Done);
                } else if (e.kind == EventKind::AggDone) {
                    log_event(EventKind::AggDone, e.device, e.peer, e.t0, 0);
                    finish_pair(static_cast<std::size_t>(e.pair_idx));
                }
            }
            if (agg_dirty_) {
                restarted = true;
                break;
            }
            try_start_pairs();
        }
        if (!restarted) {
            // the survivor holds the reduced gradient
            std::set<int> senders;
            for (const auto& pr : pairs_) senders.insert(pr.p.sender);
            for (int id : ids)
                if (!senders.count(id)) return id;
            throw InvariantViolation("reduce ended without survivor");
        }
        (void)barrier;
    }
}

void SimRunner::run_central_aggregation(std::vector<std::pair<double, double>>& ta,
                                        int ma) {
    // all slaves ship concurrently; the master holds N-1 in-flight aggregations
    const auto ids = contributors();
    double last = now_;
    const double start = now_;
    for (int id : ids) {
        if (id == ma) continue;
        DeviceSim& snd = devices_[static_cast<std::size_t>(id)];
        DeviceSim& rcv = devices_[static_cast<std::size_t>(ma)];
        const double arrive = start + cfg_.data_base_latency_ms + msg_bytes_ / cfg_.data_bandwidth;
        const double done = arrive + cfg_.agg_compute_ms;
        charge(snd, EnergyEvent::send_bytes(msg_bytes_));
        charge(rcv, EnergyEvent::receive_bytes(msg_bytes_));
        charge(rcv, EnergyEvent::aggregate());
        now_ = arrive;
        log_event(EventKind::MsgArrive, ma, id, start, msg_bytes_);
        now_ = done;
        log_event(EventKind::AggDone, ma, id, start, 0);
        ta.emplace_back(start, done);
        last = std::max(last, done);
    }
    now_ = last;
}

void SimRunner::run_neighbor_aggregation(std::vector<std::pair<double, double>>& ta) {
    // fixed undirected line over the contributor order; both endpoints of
    // every edge exchange gradients concurrently
    const auto ids = contributors();
    const double start = now_;
    double last = now_;
    for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
        for (const auto [a, b] : {std::pair{ids[k], ids[k + 1]}, std::pair{ids[k + 1], ids[k]}}) {
            DeviceSim& snd = devices_[static_cast<std::size_t>(a)];
            DeviceSim& rcv = devices_[static_cast<std::size_t>(b)];
            const double arrive = start + cfg_.data_base_latency_ms + msg_bytes_ / cfg_.data_bandwidth;
            const double done = arrive + cfg_.agg_compute_ms;
            charge(snd, EnergyEvent::send_bytes(msg_bytes_));
            charge(rcv, EnergyEvent::receive_bytes(msg_bytes_));
            charge(rcv, EnergyEvent::aggregate());
            now_ = arrive;
            log_event(EventKind::MsgArrive, b, a, start, msg_bytes_);
            now_ = done;
            log_event(EventKind::AggDone, b, a, start, 0);
            ta.emplace_back(start, done);
            last = std::max(last, done);
        }
    }
    now_ = last;
}

void SimRunner::run_broadcast(int root) {
    const auto ids = live_ids();
    std::vector<ResourceReport> reports(devices_.size());
    for (const auto& d : devices_) reports[static_cast<std::size_t>(d.id)] = d.last_report;
    const auto hops = binomial_broadcast_order(ids, root, reports);

    const double bytes = msg_bytes_;
    const double hop_time = cfg_.data_base_latency_ms + bytes / cfg_.data_bandwidth;
    std::map<int, std::vector<int>> duties;  // from -> ordered list of recipients
    for (const auto& h : hops) duties[h.from].push_back(h.to);

    std::map<int, double> payload_at;
    payload_at[root] = now_;
    // hops execute in binomial order; each forwarder sends its list one
    // after another once the payload has arrived
    std::map<int, double> next_free = {{root, now_}};
    std::vector<BroadcastHop> pending(hops.begin(), hops.end());
    double last = now_;
    std::size_t guard = 0;
    while (!pending.empty() && guard++ < hops.size() * hops.size() + 4) {
        for (auto it = pending.begin(); it != pending.end();) {
            DeviceSim& from = devices_[static_cast<std::size_t>(it->from)];
            if (!from.live) {
                // drop mid-broadcast: re-parent the recipient onto the root
                it->from = root;
                ++it;
                continue;
            }
            auto pit = payload_at.find(it->from);
            if (pit == payload_at.end()) {
                ++it;
                continue;
            }
            const double send_start = std::max(pit->second, next_free[it->from]);
            const double arrive = send_start + hop_time;
            next_free[it->from] = send_start + hop_time;
            DeviceSim& to = devices_[static_cast<std::size_t>(it->to)];
            if (to.live) {
                payload_at[it->to] = arrive;
                next_free[it->to] = arrive;
                charge(from, EnergyEvent::send_bytes(bytes));
                charge(to, EnergyEvent::receive_bytes(bytes));
                now_ = arrive;
                log_event(EventKind::BroadcastHop, it->to, it->from, send_start, bytes);
                last = std::max(last, arrive);
            }
            it = pending.erase(it);
        }
    }
    now_ = std::max(now_, last);
}

SimTrace SimRunner::run(SchedulerKind kind, DqnAgent* agent) {
    const std::uint64_t seed = cfg_.seed;
    SyntheticDataset ds = generate_blobs(cfg_.num_classes, cfg_.per_class,
                                         cfg_.feature_dim, cfg_.spread,
                                         mix_seed(seed, 1));
    ModelLayout layout{cfg_.feature_dim, cfg_.hidden_dim, cfg_.num_classes};
    ToyModel global = init_model(layout, mix_seed(seed, 2));
    msg_bytes_ = gradient_message_bytes(global.weights.size());

    Partition part = partition_dataset(ds, cfg_.num_devices);
    devices_.clear();
    std::mt19937_64 setup_rng(mix_seed(seed, 3));
    std::uniform_real_distribution<double> skew(0.9, 1.1);
    for (int d = 0; d < cfg_.num_devices; ++d) {
        DeviceSim dev;
        dev.id = d;
        dev.weights = global.weights;
        dev.shard = gather(ds, part.shard(d));
        dev.train_mean_ms = cfg_.train_time_mean_ms * skew(setup_rng);
        dev.rng.seed(mix_seed(seed, 100 + static_cast<std::uint64_t>(d)));
        devices_.push_back(std::move(dev));
    }

    // initial busy assignment under the 50% cap
    if (cfg_.busy.enabled) {
        const double p_busy =
            cfg_.busy.mean_busy_ms / (cfg_.busy.mean_busy_ms + cfg_.busy.mean_free_ms);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& d : devices_) {
            if (u(setup_rng) < p_busy && busy_count() < busy_cap()) {
                d.busy = true;
                d.state = DeviceState::Busy;
            }
        }
        for (auto& d : devices_) schedule_busy_toggle(d);
    }
    for (auto& d : devices_) {
        d.last_report = synthesize_report(d);
        push(QueuedEvent{cfg_.report_period_ms, 0, EventKind::ReportDue, d.id});
    }
    for (std::size_t k = 0; k < cfg_.faults.size(); ++k) {
        QueuedEvent e;
        e.time = cfg_.faults[k].time_ms;
        e.kind = EventKind::Fault;
        e.device = cfg_.faults[k].device;
        e.fault_idx = static_cast<int>(k);
        push(std::move(e));
    }

    std::optional<DqnAgent> local_agent;
    if (kind == SchedulerKind::Chain && agent == nullptr) {
        local_agent.emplace(cfg_.num_devices, cfg_.rl, mix_seed(seed, 4));
        std::vector<bool> busy0;
        for (const auto& d : devices_) busy0.push_back(d.busy);
        local_agent->train(busy0, cfg_.chain_train_epochs);
        agent = &*local_agent;
    }
    prev_busy_.assign(static_cast<std::size_t>(cfg_.num_devices), false);
    for (const auto& d : devices_) prev_busy_[static_cast<std::size_t>(d.id)] = d.busy;

    const int total_iters = hyper_.epochs * hyper_.agg_rounds_per_epoch;
    trace_.config_snapshot = cfg_.to_json();
    trace_.config_snapshot["scheduler"] = to_string(kind);
    trace_.config_snapshot["eta"] = hyper_.eta;
    trace_.config_snapshot["epochs"] = hyper_.epochs;
    trace_.config_snapshot["agg_rounds_per_epoch"] = hyper_.agg_rounds_per_epoch;

    const auto test_set = gather(ds, ds.test_idx);

    for (int iter = 0; iter < total_iters; ++iter) {
        current_iteration_ = iter;
        const double iter_start = now_;
        // iteration reset
        for (auto& d : devices_) {
            if (!d.live) continue;
            if (d.state == DeviceState::Done) set_state(d, DeviceState::Free);
            if (d.busy && d.state == DeviceState::Free) set_state(d, DeviceState::Busy);
        }

        // local training on this round's chunk
        const int round_in_epoch = iter % hyper_.agg_rounds_per_epoch;
        double loss_sum = 0.0;
        int loss_n = 0;
        std::vector<double> train_end(devices_.size(), -1.0);
        for (auto& d : devices_) {
            if (!d.live || !d.synced) continue;
            const std::size_t n = d.shard.size();
            const std::size_t chunk =
                (n + static_cast<std::size_t>(hyper_.agg_rounds_per_epoch) - 1) /
                static_cast<std::size_t>(hyper_.agg_rounds_per_epoch);
            const std::size_t b = std::min(n, chunk * static_cast<std::size_t>(round_in_epoch));
            const std::size_t e = std::min(n, b + chunk);
            std::span<const Sample> batch(d.shard.data() + b, e - b);
            if (batch.empty()) batch = std::span<const Sample>(d.shard.data(), std::min<std::size_t>(n, chunk));
            ToyModel local{d.weights, layout};
            auto [loss, grad] = forward_loss_grad(local, batch);
            d.grad = std::move(grad);
            loss_sum += loss;
            ++loss_n;
            std::normal_distribution<double> jitter(d.train_mean_ms,
                                                    cfg_.train_time_jitter_ms);
            const double dt = std::max(1.0, jitter(d.rng));
            charge(d, EnergyEvent::train_for(dt));
            train_end[static_cast<std::size_t>(d.id)] = now_ + dt;
            push(QueuedEvent{now_ + dt, 0, EventKind::TrainEnd, d.id});
        }

        // synchronous barrier: wait for the slowest live trainer
        int waiting = 0;
        for (const auto& d : devices_)
            if (d.live && d.synced) ++waiting;
        while (waiting > 0) {
            QueuedEvent e = pq_.top();
            pq_.pop();
            now_ = std::max(now_, e.time);
            if (e.kind == EventKind::TrainEnd) {
                if (devices_[static_cast<std::size_t>(e.device)].live) {
                    log_event(EventKind::TrainEnd, e.device, -1, iter_start, 0);
                }
                --waiting;
            } else {
                handle_background(e);
            }
        }
        const double barrier = now_;
        const double t_tr = barrier - iter_start;

        IterationRecord rec;
        rec.iteration = iter;
        rec.t_tr = t_tr;
        rec.train_loss = loss_n > 0 ? loss_sum / loss_n : 0.0;

        auto ids = contributors();
        if (ids.empty()) break;  // everyone dropped: partial trace
        rec.live_count = static_cast<int>(ids.size());

        std::vector<std::pair<double, double>> ta, tb;
        ParamVector global_grad;
        int survivor;
        if (kind == SchedulerKind::Central) {
            survivor = ids.front();
            run_central_aggregation(ta, survivor);
            std::vector<ParamVector> grads;
            for (int id : ids) grads.push_back(devices_[static_cast<std::size_t>(id)].grad);
            global_grad = central_aggregate(grads);
        } else if (kind == SchedulerKind::Neighbor) {
            survivor = ids.front();
            run_neighbor_aggregation(ta);
            std::vector<ParamVector> inners;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                std::vector<ParamVector> nbrs;
                if (k > 0) nbrs.push_back(devices_[static_cast<std::size_t>(ids[k - 1])].grad);
                if (k + 1 < ids.size())
                    nbrs.push_back(devices_[static_cast<std::size_t>(ids[k + 1])].grad);
                inners.push_back(neighbor_aggregate(
                    devices_[static_cast<std::size_t>(ids[k])].grad, nbrs,
                    static_cast<int>(nbrs.size())));
            }
            global_grad = central_aggregate(inners);  // the outer 1/n of the rule
        } else {
            survivor = run_pair_aggregation(kind, agent, barrier, ta, tb);
            ids = contributors();  // a drop may have shrunk the set
            rec.live_count = static_cast<int>(ids.size());
            global_grad = devices_[static_cast<std::size_t>(survivor)].working;
        }
        rec.survivor = survivor;
        rec.survivor_theta = (kind == SchedulerKind::Central || kind == SchedulerKind::Neighbor)
                                 ? static_cast<double>(ids.size())
                                 : global_grad.theta;
        rec.t_a = union_length(ta);
        rec.t_b = union_length(tb);
        rec.agg_makespan = now_ - barrier;
        rec.makespan = rec.t_tr + rec.agg_makespan;

        // global update and resource-aware broadcast
        ParamVector w(global.weights.values, 1.0);
        global.weights = sgd_step(w, global_grad, hyper_.eta);
        run_broadcast(survivor);
        for (auto& d : devices_) {
            if (!d.live) continue;
            d.weights = global.weights;  // theta back to 1 with the new iteration
            d.synced = true;
        }

        std::vector<EnergyMeter> live_meters;
        for (const auto& d : devices_)
            if (d.live) live_meters.push_back(d.meter);
        rec.energy_variance = energy_variance(live_meters);
        trace_.iterations.push_back(rec);

        if ((iter + 1) % hyper_.agg_rounds_per_epoch == 0) {
            trace_.epoch_weights.push_back(global.weights.values);
        }
    }

    trace_.meters.clear();
    for (const auto& d : devices_) {
        trace_.meters.push_back(d.meter);
        trace_.final_device_weights.push_back(d.weights.values);
        trace_.final_live.push_back(d.live);
    }
    trace_.final_accuracy = evaluate(global, test_set);
    trace_.final_train_loss =
        trace_.iterations.empty() ? 0.0 : trace_.iterations.back().train_loss;
    return std::move(trace_);
}

} // namespace

MeshSimulator::MeshSimulator(SimConfig cfg, TrainHyper hyper)
    : cfg_(std::move(cfg)), hyper_(hyper) {}

SimTrace MeshSimulator::run(SchedulerKind kind, DqnAgent* agent) {
    SimRunner runner(cfg_, hyper_);
    return runner.run(kind, agent);
}

SimTrace run_experiment(const SimConfig& cfg, const TrainHyper& hyper, SchedulerKind kind,
                        DqnAgent* agent) {
    return MeshSimulator(cfg, hyper).run(kind, agent);
}

} // namespace chainreduce
