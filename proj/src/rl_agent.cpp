#include "chainreduce/rl_agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

namespace chainreduce {

// ---------------------------------------------------------------------------
// MlpQ

MlpQ::MlpQ(int in, int hidden, int out, std::mt19937_64& rng)
    : in_(in), hidden_(hidden), out_(out) {
    auto init = [&rng](std::vector<double>& w, int count, int fan_in) {
        std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
        w.resize(static_cast<std::size_t>(count));
        for (double& v : w) v = d(rng);
    };
    init(w1_, in * hidden, in);
    init(w2_, hidden * out, hidden);
    b1_.assign(static_cast<std::size_t>(hidden), 0.0);
    b2_.assign(static_cast<std::size_t>(out), 0.0);
}

std::vector<double> MlpQ::q_values(const std::vector<double>& x) const {
    std::vector<double> h(static_cast<std::size_t>(hidden_));
    for (int j = 0; j < hidden_; ++j) {
        double acc = b1_[static_cast<std::size_t>(j)];
        for (int i = 0; i < in_; ++i)
            acc += x[static_cast<std::size_t>(i)] * w1_[static_cast<std::size_t>(i * hidden_ + j)];
        h[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> q(static_cast<std::size_t>(out_));
    for (int k = 0; k < out_; ++k) {
        double acc = b2_[static_cast<std::size_t>(k)];
        for (int j = 0; j < hidden_; ++j)
            acc += h[static_cast<std::size_t>(j)] * w2_[static_cast<std::size_t>(j * out_ + k)];
        q[static_cast<std::size_t>(k)] = acc;
    }
    return q;
}

void MlpQ::fit(const std::vector<const Transition*>& batch,
               const std::vector<double>& targets, double lr) {
    std::vector<double> gw1(w1_.size(), 0.0), gb1(b1_.size(), 0.0);
    std::vector<double> gw2(w2_.size(), 0.0), gb2(b2_.size(), 0.0);
    std::vector<double> h(static_cast<std::size_t>(hidden_));
    std::vector<double> pre(static_cast<std::size_t>(hidden_));

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& x = batch[s]->x;
        const int a = batch[s]->action;
        for (int j = 0; j < hidden_; ++j) {
            double acc = b1_[static_cast<std::size_t>(j)];
            for (int i = 0; i < in_; ++i)
                acc += x[static_cast<std::size_t>(i)] *
                       w1_[static_cast<std::size_t>(i * hidden_ + j)];
            pre[static_cast<std::size_t>(j)] = acc;
            h[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
        }
        double q = b2_[static_cast<std::size_t>(a)];
        for (int j = 0; j < hidden_; ++j)
            q += h[static_cast<std::size_t>(j)] * w2_[static_cast<std::size_t>(j * out_ + a)];

        const double dq = (q - targets[s]) * inv_b;  // d(MSE/2)/dq
        gb2[static_cast<std::size_t>(a)] += dq;
        for (int j = 0; j < hidden_; ++j) {
            gw2[static_cast<std::size_t>(j * out_ + a)] += h[static_cast<std::size_t>(j)] * dq;
            if (pre[static_cast<std::size_t>(j)] > 0.0) {
                const double dh = w2_[static_cast<std::size_t>(j * out_ + a)] * dq;
                gb1[static_cast<std::size_t>(j)] += dh;
                for (int i = 0; i < in_; ++i)
                    gw1[static_cast<std::size_t>(i * hidden_ + j)] +=
                        x[static_cast<std::size_t>(i)] * dh;
            }
        }
    }
    for (std::size_t k = 0; k < w1_.size(); ++k) w1_[k] -= lr * gw1[k];
    for (std::size_t k = 0; k < b1_.size(); ++k) b1_[k] -= lr * gb1[k];
    for (std::size_t k = 0; k < w2_.size(); ++k) w2_[k] -= lr * gw2[k];
    for (std::size_t k = 0; k < b2_.size(); ++k) b2_[k] -= lr * gb2[k];
}

std::unique_ptr<QFunction> MlpQ::clone() const {
    return std::unique_ptr<MlpQ>(new MlpQ(*this));
}

nlohmann::json MlpQ::to_json() const {
    return {{"type", "mlp"}, {"in", in_},   {"hidden", hidden_}, {"out", out_},
            {"w1", w1_},     {"b1", b1_},   {"w2", w2_},         {"b2", b2_}};
}

std::unique_ptr<MlpQ> MlpQ::from_json(const nlohmann::json& j) {
    std::unique_ptr<MlpQ> q(new MlpQ());
    q->in_ = j.at("in").get<int>();
    q->hidden_ = j.at("hidden").get<int>();
    q->out_ = j.at("out").get<int>();
    q->w1_ = j.at("w1").get<std::vector<double>>();
    q->b1_ = j.at("b1").get<std::vector<double>>();
    q->w2_ = j.at("w2").get<std::vector<double>>();
    q->b2_ = j.at("b2").get<std::vector<double>>();
    return q;
}

// ---------------------------------------------------------------------------
// TabularQ

TabularQ::TabularQ(int out, double table_lr) : out_(out), table_lr_(table_lr) {}

std::string TabularQ::key(const std::vector<double>& x) const {
    std::string k;
    k.reserve(x.size() * sizeof(double));
    for (double v : x) {
        char buf[sizeof(double)];
        std::memcpy(buf, &v, sizeof(double));
        k.append(buf, sizeof(double));
    }
    return k;
}

std::vector<double> TabularQ::q_values(const std::vector<double>& x) const {
    auto it = table_.find(key(x));
    if (it == table_.end()) return std::vector<double>(static_cast<std::size_t>(out_), 0.0);
    return it->second;
}

void TabularQ::fit(const std::vector<const Transition*>& batch,
                   const std::vector<double>& targets, double /*lr*/) {
    for (std::size_t s = 0; s < batch.size(); ++s) {
        auto& row = table_[key(batch[s]->x)];
        if (row.empty()) row.assign(static_cast<std::size_t>(out_), 0.0);
        auto& q = row[static_cast<std::size_t>(batch[s]->action)];
        q += table_lr_ * (targets[s] - q);
    }
}

std::unique_ptr<QFunction> TabularQ::clone() const {
    return std::make_unique<TabularQ>(*this);
}

nlohmann::json TabularQ::to_json() const {
    return {{"type", "tabular"}, {"out", out_}, {"entries", table_.size()}};
}

// ---------------------------------------------------------------------------
// DqnAgent

DqnAgent::DqnAgent(int num_devices, RLConfig cfg, std::uint64_t seed, bool tabular)
    : n_(num_devices), cfg_(std::move(cfg)), rng_(seed), tabular_(tabular) {
    if (n_ < 2) throw InvalidInput("DqnAgent: need at least 2 devices");
    cfg_.validate();
    if (tabular_) {
        online_ = std::make_unique<TabularQ>(n_);
    } else {
        online_ = std::make_unique<MlpQ>(7 * n_, cfg_.hidden, n_, rng_);
    }
    target_ = online_->clone();
}

std::vector<double> DqnAgent::q_values(const SchedEnvState& s) const {
    return online_->q_values(encode_state(s));
}

void DqnAgent::learn_step() {
    if (replay_.size() < static_cast<std::size_t>(cfg_.batch_size)) return;
    std::uniform_int_distribution<std::size_t> pick(0, replay_.size() - 1);
    std::vector<const Transition*> batch;
    std::vector<double> targets;
    batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
    for (int k = 0; k < cfg_.batch_size; ++k) {
        const Transition& tr = replay_[pick(rng_)];
        double target = tr.reward;
        if (!tr.terminal) {
            const auto q2 = target_->q_values(tr.x2);
            target += cfg_.discount * *std::max_element(q2.begin(), q2.end());
        }
        batch.push_back(&tr);
        targets.push_back(target);
    }
    online_->fit(batch, targets, cfg_.learn_rate);
    if (++updates_ % cfg_.target_sync == 0) target_ = online_->clone();
}

namespace {

// greedy over the legal actions only; strict > keeps the lowest id on ties
int greedy_action(const std::vector<double>& q, const std::vector<int>& valid) {
    int best = valid.front();
    for (int a : valid)
        if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
    return best;
}

} // namespace

TrainResult DqnAgent::train(const std::vector<bool>& busy, int max_epoch_override,
                            double epsilon_start) {
    if (static_cast<int>(busy.size()) != n_)
        throw InvalidInput("train: busy vector size mismatch");
    const int max_epoch = max_epoch_override > 0 ? max_epoch_override : cfg_.max_epoch;
    const double switch_threshold = threshold(n_, cfg_);
    double eps = epsilon_start >= 0.0 ? epsilon_start : cfg_.epsilon0;
    bool switched = cfg_.strategy == Strategy::DGE;  // DGE decays from the start
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    TrainResult res;
    std::vector<double> eval_rewards;
    double prev_ma = 0.0;
    bool have_prev = false;
    int streak = 0;

    for (int epoch = 0; epoch < max_epoch; ++epoch) {
        SchedEnvState s = SchedEnvState::initial(busy);
        res.epsilons.push_back(eps);
        double ep_reward = 0.0;
        bool terminal = false;
        while (!terminal) {
            int a;
            if (coin(rng_) < eps) {
                const auto va = valid_actions(s);
                if (va.empty()) break;  // cannot happen mid-episode
                std::uniform_int_distribution<std::size_t> pick(0, va.size() - 1);
                a = va[pick(rng_)];
            } else {
                const auto va = valid_actions(s);
                if (va.empty()) break;
                a = greedy_action(online_->q_values(encode_state(s)), va);
            }
            StepResult r = env_step(s, a, cfg_);
            Transition tr{encode_state(s), a, r.reward, encode_state(r.next), r.terminal};
            if (replay_.size() < static_cast<std::size_t>(cfg_.replay_capacity)) {
                replay_.push_back(std::move(tr));
            } else {
                replay_[replay_pos_] = std::move(tr);
                replay_pos_ = (replay_pos_ + 1) % replay_.size();
            }
            learn_step();
            ep_reward += r.reward;
            terminal = r.terminal;
            s = std::move(r.next);
        }
        res.rewards.push_back(ep_reward);

        // convergence is judged on the greedy policy's reward so exploration
        // noise cannot mask (or fake) a settled policy
        double eval_reward = 0.0;
        {
            SchedEnvState es = SchedEnvState::initial(busy);
            bool done = false;
            while (!done) {
                const auto va = valid_actions(es);
                if (va.empty()) break;
                const int a = greedy_action(online_->q_values(encode_state(es)), va);
                StepResult r = env_step(es, a, cfg_);
                eval_reward += r.reward;
                done = r.terminal;
                es = std::move(r.next);
            }
        }
        eval_rewards.push_back(eval_reward);

        if (cfg_.strategy == Strategy::DGE) {
            eps *= cfg_.decay;
        } else if (!switched) {
            if (ep_reward > switch_threshold) {
                switched = true;
                eps = cfg_.epsilon_new;
            }
        } else if (cfg_.strategy == Strategy::TDGE) {
            eps *= cfg_.decay;
        }

        if (eval_rewards.size() >= 10) {
            const double ma =
                std::accumulate(eval_rewards.end() - 10, eval_rewards.end(), 0.0) / 10.0;
            if (have_prev) {
                const double rel = std::abs(ma - prev_ma) / std::max(std::abs(prev_ma), 1e-9);
                streak = rel < 0.01 ? streak + 1 : 0;
                if (streak >= 10) {
                    res.converged = true;
                    res.episodes_to_converge = epoch + 1;
                    break;
                }
            }
            prev_ma = ma;
            have_prev = true;
        }
    }
    if (!res.converged) res.episodes_to_converge = static_cast<int>(res.rewards.size());
    ++version_;
    return res;
}

nlohmann::json DqnAgent::checkpoint() const {
    nlohmann::json cfg = {{"alpha", cfg_.alpha},
                          {"beta", cfg_.beta},
                          {"rho", cfg_.rho},
                          {"epsilon0", cfg_.epsilon0},
                          {"epsilon_new", cfg_.epsilon_new},
                          {"decay", cfg_.decay},
                          {"strategy", static_cast<int>(cfg_.strategy)},
                          {"phi", cfg_.phi},
                          {"max_epoch", cfg_.max_epoch},
                          {"discount", cfg_.discount},
                          {"learn_rate", cfg_.learn_rate},
                          {"hidden", cfg_.hidden},
                          {"target_sync", cfg_.target_sync},
                          {"replay_capacity", cfg_.replay_capacity},
                          {"batch_size", cfg_.batch_size}};
    return {{"format", "chainreduce-agent-v1"},
            {"num_devices", n_},
            {"version", version_},
            {"cfg", cfg},
            {"q", online_->to_json()}};
}

DqnAgent DqnAgent::from_checkpoint(const nlohmann::json& j) {
    if (j.value("format", "") != "chainreduce-agent-v1")
        throw InvalidInput("unrecognized agent checkpoint format");
    const auto& c = j.at("cfg");
    RLConfig cfg;
    cfg.alpha = c.at("alpha");
    cfg.beta = c.at("beta");
    cfg.rho = c.at("rho");
    cfg.epsilon0 = c.at("epsilon0");
    cfg.epsilon_new = c.at("epsilon_new");
    cfg.decay = c.at("decay");
    cfg.strategy = static_cast<Strategy>(c.at("strategy").get<int>());
    cfg.phi = c.at("phi");
    cfg.max_epoch = c.at("max_epoch");
    cfg.discount = c.at("discount");
    cfg.learn_rate = c.at("learn_rate");
    cfg.hidden = c.at("hidden");
    cfg.target_sync = c.at("target_sync");
    cfg.replay_capacity = c.at("replay_capacity");
    cfg.batch_size = c.at("batch_size");
    DqnAgent agent(j.at("num_devices").get<int>(), cfg, 0);
    if (j.at("q").at("type") == "mlp") {
        agent.online_ = MlpQ::from_json(j.at("q"));
        agent.target_ = agent.online_->clone();
    }
    agent.version_ = j.at("version").get<int>();
    return agent;
}

void DqnAgent::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw InvalidInput("cannot open agent checkpoint for writing: " + path);
    f << checkpoint().dump(2) << "\n";
}

DqnAgent DqnAgent::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("cannot open agent checkpoint: " + path);
    nlohmann::json j;
    f >> j;
    return from_checkpoint(j);
}

TrainResult train_agent(DqnAgent& agent, const std::vector<bool>& busy) {
    return agent.train(busy);
}

namespace {

SchedulePlan fallback_plan(const std::vector<bool>& busy) {
    const int n = static_cast<int>(busy.size());
    std::vector<int> free_ids, busy_ids;
    for (int d = 0; d < n; ++d) (busy[static_cast<std::size_t>(d)] ? busy_ids : free_ids).push_back(d);
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
        if (!free_ids.empty() && free_ids.front() != survivor) {
            plan.rounds.push_back({PairTask{free_ids.front(), survivor}});
        }
    }
    for (int b : busy_ids) plan.deferred.push_back(PairTask{b, survivor});
    return plan;
}

} // namespace

SchedulePlan plan_from_policy(const DqnAgent& agent, const std::vector<bool>& busy) {
    if (static_cast<int>(busy.size()) != agent.num_devices())
        throw InvalidInput("plan_from_policy: busy vector size mismatch");
    SchedEnvState s = SchedEnvState::initial(busy);
    while (true) {
        const auto va = valid_actions(s);
        if (va.empty()) return fallback_plan(busy);
        const int a = greedy_action(agent.online_->q_values(encode_state(s)), va);
        StepResult r = env_step(s, a, agent.config());
        if (r.terminal) {
            if (static_cast<int>(r.next.pairs.size()) == s.n() - 1) {
                return pack_plan(r.next.pairs, r.next.pair_deferred);
            }
            return fallback_plan(busy);  // rollout hit an invalid terminal
        }
        s = std::move(r.next);
    }
}

bool relearn_if_changed(const std::vector<bool>& previous, const std::vector<bool>& current,
                        DqnAgent& agent, int slot_epochs) {
    if (previous == current) return false;
    agent.train(current, slot_epochs, agent.config().epsilon_new);
    return true;
}

} // namespace chainreduce
