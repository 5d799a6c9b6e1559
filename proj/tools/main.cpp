#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "chainreduce/config.hpp"
#include "chainreduce/metrics.hpp"
#include "chainreduce/sim.hpp"

namespace cr = chainreduce;

namespace {

bool verbose_logging() {
    const char* v = std::getenv("CHAINREDUCE_LOG");
    return v != nullptr && std::string(v) != "" && std::string(v) != "0";
}

void write_json(const nlohmann::json& j, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream f(path);
    if (!f) throw cr::InvalidInput("cannot write output file: " + path);
    f << j.dump(2) << "\n";
}

std::vector<bool> parse_busy_mask(const std::string& mask, int n) {
    std::vector<bool> out;
    if (mask.empty()) {
        out.assign(static_cast<std::size_t>(n), false);
        return out;
    }
    for (char c : mask) {
        if (c == '0') out.push_back(false);
        else if (c == '1') out.push_back(true);
        else if (c == ',' || c == ' ') continue;
        else throw cr::InvalidInput("busy mask must be 0/1 characters");
    }
    if (static_cast<int>(out.size()) != n)
        throw cr::InvalidInput("busy mask length must equal device count");
    return out;
}

struct CommonOpts {
    std::string config_path;
    int devices = -1;
    std::string seeds = "1";
    std::string out;
    int epochs = -1;
    int agg_rounds = -1;
    double eta = -1.0;
    std::string fault_script;
    bool busy = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "TOML or JSON config file");
    cmd->add_option("--devices", o.devices, "number of devices");
    cmd->add_option("--seeds", o.seeds, "seed list/range, e.g. 1,2 or 1..5");
    cmd->add_option("--out", o.out, "output JSON path (- for stdout)");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--agg-rounds", o.agg_rounds, "aggregation rounds per epoch");
    cmd->add_option("--eta", o.eta, "SGD learning rate");
    cmd->add_option("--fault-script", o.fault_script,
                    "CSV fault script: time_ms,device,drop|reconnect");
    cmd->add_flag("--busy", o.busy, "enable the background busy process");
}

std::pair<cr::SimConfig, cr::TrainHyper> build_config(const CommonOpts& o,
                                                      std::uint64_t seed) {
    cr::SimConfig cfg;
    cr::TrainHyper hyper;
    hyper.epochs = 5;
    hyper.agg_rounds_per_epoch = 2;
    if (!o.config_path.empty())
        cr::apply_config(cr::load_config_file(o.config_path), cfg, hyper);
    if (o.devices > 0) cfg.num_devices = o.devices;
    if (o.epochs > 0) hyper.epochs = o.epochs;
    if (o.agg_rounds > 0) hyper.agg_rounds_per_epoch = o.agg_rounds;
    if (o.eta > 0) hyper.eta = o.eta;
    if (o.busy) cfg.busy.enabled = true;
    if (!o.fault_script.empty()) cfg.faults = cr::parse_fault_script(o.fault_script);
    cfg.seed = seed;
    cfg.validate();
    cr::validate_hyper(hyper);
    return {cfg, hyper};
}

int cmd_train(const CommonOpts& o, const std::string& scheduler,
              const std::string& events_csv, const std::string& resource_csv) {
    const auto kind = cr::scheduler_kind_from_string(scheduler);
    const auto seeds = cr::parse_seed_spec(o.seeds);
    nlohmann::json runs = nlohmann::json::array();
    for (std::uint64_t seed : seeds) {
        auto [cfg, hyper] = build_config(o, seed);
        cr::SimTrace trace = cr::run_experiment(cfg, hyper, kind);
        if (verbose_logging()) {
            for (const auto& e : trace.events)
                std::cerr << e.time << " " << cr::to_string(e.kind) << " dev="
                          << e.device << " peer=" << e.peer << " " << e.detail << "\n";
        }
        if (!events_csv.empty())
            trace.export_events_csv(seeds.size() == 1
                                        ? events_csv
                                        : events_csv + "." + std::to_string(seed));
        if (!resource_csv.empty())
            trace.export_resource_csv(seeds.size() == 1
                                          ? resource_csv
                                          : resource_csv + "." + std::to_string(seed));
        nlohmann::json r = trace.metrics_json();
        r["seed"] = seed;
        runs.push_back(std::move(r));
    }
    write_json(runs.size() == 1 ? runs[0] : nlohmann::json{{"runs", runs}}, o.out);
    return 0;
}

int cmd_sched_bench(const CommonOpts& o, const std::string& schedulers) {
    std::vector<std::string> names;
    std::stringstream ss(schedulers);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) names.push_back(part);
    if (names.empty()) throw cr::InvalidInput("no schedulers given");
    const auto seeds = cr::parse_seed_spec(o.seeds);

    std::map<std::string, std::vector<cr::SimTrace>> traces;
    for (const auto& name : names) {
        const auto kind = cr::scheduler_kind_from_string(name);
        for (std::uint64_t seed : seeds) {
            auto [cfg, hyper] = build_config(o, seed);
            traces[name].push_back(cr::run_experiment(cfg, hyper, kind));
        }
    }
    auto summary = cr::compare_schedulers(traces);
    nlohmann::json out = summary.to_json();
    out["seeds"] = o.seeds;
    write_json(out, o.out);
    return 0;
}

int cmd_rl(const CommonOpts& o, const std::string& strategy, const std::string& busy_mask,
           const std::string& calibrate_phi, int max_epoch, const std::string& save_path,
           const std::string& curves_csv) {
    const auto seeds = cr::parse_seed_spec(o.seeds);
    auto [cfg, hyper] = build_config(o, seeds.front());
    (void)hyper;
    if (!strategy.empty()) cfg.rl.strategy = cr::strategy_from_string(strategy);
    if (max_epoch > 0) cfg.rl.max_epoch = max_epoch;
    const auto busy = parse_busy_mask(busy_mask, cfg.num_devices);

    if (!calibrate_phi.empty()) {
        // sweep "lo:step:hi" and report convergence epochs per phi
        std::stringstream ps(calibrate_phi);
        std::string lo_s, step_s, hi_s;
        if (!std::getline(ps, lo_s, ':') || !std::getline(ps, step_s, ':') ||
            !std::getline(ps, hi_s))
            throw cr::InvalidInput("--calibrate-phi expects lo:step:hi");
        const double lo = std::stod(lo_s), step = std::stod(step_s), hi = std::stod(hi_s);
        if (step <= 0 || hi < lo) throw cr::InvalidInput("bad phi sweep range");
        nlohmann::json table = nlohmann::json::array();
        for (double phi = lo; phi <= hi + 1e-12; phi += step) {
            cr::RLConfig c = cfg.rl;
            c.phi = phi;
            double mean_ep = 0.0;
            int conv = 0;
            for (std::uint64_t seed : seeds) {
                cr::DqnAgent agent(cfg.num_devices, c, seed);
                const auto res = agent.train(busy);
                if (res.converged) {
                    mean_ep += res.episodes_to_converge;
                    ++conv;
                }
            }
            table.push_back({{"phi", phi},
                             {"converged_seeds", conv},
                             {"mean_episodes", conv ? mean_ep / conv : -1.0}});
        }
        write_json({{"phi_sweep", table}}, o.out);
        return 0;
    }

    nlohmann::json per_seed = nlohmann::json::array();
    for (std::uint64_t seed : seeds) {
        cr::DqnAgent agent(cfg.num_devices, cfg.rl, seed);
        const auto res = agent.train(busy);
        if (!curves_csv.empty()) {
            std::ofstream f(curves_csv + "." + std::to_string(seed) + ".csv");
            f << "epoch,reward,epsilon\n";
            for (std::size_t e = 0; e < res.rewards.size(); ++e)
                f << e << "," << res.rewards[e] << "," << res.epsilons[e] << "\n";
        }
        const auto plan = cr::plan_from_policy(agent, busy);
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& round : plan.rounds) {
            nlohmann::json r = nlohmann::json::array();
            for (const auto& p : round)
                r.push_back({{"sender", p.sender}, {"receiver", p.receiver}});
            rounds.push_back(std::move(r));
        }
        nlohmann::json deferred = nlohmann::json::array();
        for (const auto& p : plan.deferred)
            deferred.push_back({{"sender", p.sender}, {"receiver", p.receiver}});
        per_seed.push_back({{"seed", seed},
                            {"episodes", res.rewards.size()},
                            {"converged", res.converged},
                            {"episodes_to_converge", res.episodes_to_converge},
                            {"final_reward", res.rewards.empty() ? 0.0 : res.rewards.back()},
                            {"rounds", rounds},
                            {"deferred", deferred}});
        if (!save_path.empty() && seed == seeds.front()) agent.save(save_path);
    }
    write_json({{"strategy", cr::to_string(cfg.rl.strategy)},
                {"phi", cfg.rl.phi},
                {"threshold", cr::threshold(cfg.num_devices, cfg.rl)},
                {"results", per_seed}},
               o.out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ChainSGD-reduce simulator"};
    app.require_subcommand(1);

    CommonOpts train_o, bench_o, rl_o;
    std::string scheduler = "chain", events_csv, resource_csv;
    auto* train = app.add_subcommand("train", "run a full training experiment");
    add_common(train, train_o);
    train->add_option("--scheduler", scheduler,
                      "central|chain|neighbor|ring|tree");
    train->add_option("--events-csv", events_csv, "export the event log");
    train->add_option("--resource-csv", resource_csv, "export resource reports");

    std::string schedulers = "central,chain,ring,tree";
    auto* bench = app.add_subcommand("sched-bench", "compare schedulers over seeds");
    add_common(bench, bench_o);
    bench->add_option("--schedulers", schedulers, "comma-separated scheduler list");

    std::string strategy, busy_mask, save_path, calibrate_phi, curves_csv;
    int max_epoch = -1;
    auto* rl = app.add_subcommand("rl", "train the chain scheduler agent");
    add_common(rl, rl_o);
    rl->add_option("--strategy", strategy, "dge|tge|tdge");
    rl->add_option("--busy-mask", busy_mask, "per-device 0/1 busy snapshot");
    rl->add_option("--calibrate-phi", calibrate_phi,
                   "sweep phi as lo:step:hi and report convergence epochs");
    rl->add_option("--max-epoch", max_epoch, "episode budget");
    rl->add_option("--save-agent", save_path, "write the trained agent to a file");
    rl->add_option("--curves-csv", curves_csv, "reward curve CSV path prefix");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_o, scheduler, events_csv, resource_csv);
        if (bench->parsed()) return cmd_sched_bench(bench_o, schedulers);
        if (rl->parsed())
            return cmd_rl(rl_o, strategy, busy_mask, calibrate_phi, max_epoch, save_path,
                          curves_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
