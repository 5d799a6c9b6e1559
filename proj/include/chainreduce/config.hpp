#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chainreduce/sim.hpp"

namespace chainreduce {

/// Minimal TOML subset: [section] / [a.b] headers, key = value with
/// strings, numbers, booleans and flat arrays, # comments.
nlohmann::json parse_toml(const std::string& text);

/// Loads TOML or JSON by extension (falls back to sniffing the first
/// non-space character).
nlohmann::json load_config_file(const std::string& path);

/// CSV fault script: one `time_ms,device,drop|reconnect` per line.
std::vector<FaultAction> parse_fault_script(const std::string& path);

/// "3", "1,4,9" or "1..5" (inclusive).
std::vector<std::uint64_t> parse_seed_spec(const std::string& spec);

Strategy strategy_from_string(const std::string& s);
const char* to_string(Strategy s);

RLConfig rl_config_from_json(const nlohmann::json& j, RLConfig base = {});
nlohmann::json rl_config_to_json(const RLConfig& c);

/// Applies a loaded config document onto SimConfig + TrainHyper defaults.
/// Recognized top-level keys mirror SimConfig::to_json, plus
/// eta/epochs/agg_rounds_per_epoch and an `rl` table.
void apply_config(const nlohmann::json& doc, SimConfig& cfg, TrainHyper& hyper);

} // namespace chainreduce
