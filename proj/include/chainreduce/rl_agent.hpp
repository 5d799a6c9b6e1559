#pragma once

#include <memory>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "chainreduce/scheduler.hpp"

namespace chainreduce {

struct Transition {
    std::vector<double> x;
    int action = 0;
    double reward = 0.0;
    std::vector<double> x2;
    bool terminal = false;
};

/// Action-value approximator over encoded scheduler states.
class QFunction {
public:
    virtual ~QFunction() = default;
    virtual std::vector<double> q_values(const std::vector<double>& x) const = 0;
    virtual void fit(const std::vector<const Transition*>& batch,
                     const std::vector<double>& targets, double lr) = 0;
    virtual std::unique_ptr<QFunction> clone() const = 0;
    virtual nlohmann::json to_json() const = 0;
};

/// Two-layer dense net trained by plain SGD on the TD error.
class MlpQ : public QFunction {
public:
    MlpQ(int in, int hidden, int out, std::mt19937_64& rng);
    std::vector<double> q_values(const std::vector<double>& x) const override;
    void fit(const std::vector<const Transition*>& batch,
             const std::vector<double>& targets, double lr) override;
    std::unique_ptr<QFunction> clone() const override;
    nlohmann::json to_json() const override;
    static std::unique_ptr<MlpQ> from_json(const nlohmann::json& j);

private:
    MlpQ() = default;
    int in_ = 0, hidden_ = 0, out_ = 0;
    std::vector<double> w1_, b1_, w2_, b2_;
};

/// Exact table over visited states; usable for small N as an oracle
/// cross-check of the net.
class TabularQ : public QFunction {
public:
    TabularQ(int out, double table_lr = 0.2);
    std::vector<double> q_values(const std::vector<double>& x) const override;
    void fit(const std::vector<const Transition*>& batch,
             const std::vector<double>& targets, double lr) override;
    std::unique_ptr<QFunction> clone() const override;
    nlohmann::json to_json() const override;

private:
    std::string key(const std::vector<double>& x) const;
    int out_;
    double table_lr_;
    std::map<std::string, std::vector<double>> table_;
};

struct TrainResult {
    std::vector<double> rewards;   // cumulative reward per episode
    std::vector<double> epsilons;  // epsilon at the start of each episode
    int episodes_to_converge = 0;
    bool converged = false;
};

class DqnAgent {
public:
    DqnAgent(int num_devices, RLConfig cfg, std::uint64_t seed, bool tabular = false);

    /// Runs the scheduler training loop against a fixed busy snapshot.
    /// epsilon_start < 0 selects the strategy default.
    TrainResult train(const std::vector<bool>& busy, int max_epoch_override = -1,
                      double epsilon_start = -1.0);

    std::vector<double> q_values(const SchedEnvState& s) const;
    int num_devices() const { return n_; }
    const RLConfig& config() const { return cfg_; }
    int version() const { return version_; }

    nlohmann::json checkpoint() const;
    static DqnAgent from_checkpoint(const nlohmann::json& j);
    void save(const std::string& path) const;
    static DqnAgent load(const std::string& path);

private:
    friend SchedulePlan plan_from_policy(const DqnAgent&, const std::vector<bool>&);
    void learn_step();

    int n_ = 0;
    RLConfig cfg_;
    std::mt19937_64 rng_;
    bool tabular_ = false;
    std::unique_ptr<QFunction> online_;
    std::unique_ptr<QFunction> target_;
    std::vector<Transition> replay_;
    std::size_t replay_pos_ = 0;
    int updates_ = 0;
    int version_ = 0;
};

TrainResult train_agent(DqnAgent& agent, const std::vector<bool>& busy);

/// Greedy rollout (epsilon = 0, lowest id wins ties) packed into a plan.
/// An invalid rollout falls back to a tree over the Free devices with the
/// Busy devices deferred into the survivor.
SchedulePlan plan_from_policy(const DqnAgent& agent, const std::vector<bool>& busy);

/// Runs a bounded re-training slot when the Busy/Free vector changed;
/// returns true when re-training happened (agent version increments).
bool relearn_if_changed(const std::vector<bool>& previous, const std::vector<bool>& current,
                        DqnAgent& agent, int slot_epochs = 40);

} // namespace chainreduce
