#include "chainreduce/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace chainreduce {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

nlohmann::json parse_scalar(const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) throw InvalidInput("toml: empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw InvalidInput("toml: unterminated string: " + v);
        return v.substr(1, v.size() - 2);
    }
    if (v == "true") return true;
    if (v == "false") return false;
    try {
        std::size_t used = 0;
        if (v.find_first_of(".eE") != std::string::npos &&
            v.find("0x") == std::string::npos) {
            const double d = std::stod(v, &used);
            if (used == v.size()) return d;
        } else {
            const long long i = std::stoll(v, &used, 0);
            if (used == v.size()) return i;
        }
    } catch (const std::exception&) {
    }
    throw InvalidInput("toml: cannot parse value: " + v);
}

nlohmann::json parse_value(const std::string& raw) {
    const std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') throw InvalidInput("toml: unterminated array: " + v);
        nlohmann::json arr = nlohmann::json::array();
        std::string inner = v.substr(1, v.size() - 2);
        std::string item;
        bool in_str = false;
        for (char c : inner) {
            if (c == '"') in_str = !in_str;
            if (c == ',' && !in_str) {
                if (!trim(item).empty()) arr.push_back(parse_scalar(item));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!trim(item).empty()) arr.push_back(parse_scalar(item));
        return arr;
    }
    return parse_scalar(v);
}

nlohmann::json* section_for(nlohmann::json& root, const std::string& dotted) {
    nlohmann::json* cur = &root;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        part = trim(part);
        if (part.empty()) throw InvalidInput("toml: empty section name");
        cur = &(*cur)[part];
    }
    return cur;
}

} // namespace

nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* section = &root;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw InvalidInput("toml: bad section header at line " +
                                   std::to_string(lineno));
            section = section_for(root, line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidInput("toml: expected key = value at line " +
                               std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw InvalidInput("toml: empty key at line " + std::to_string(lineno));
        (*section)[key] = parse_value(line.substr(eq + 1));
    }
    return root;
}

nlohmann::json load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("cannot open config file: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    const bool json_ext = path.size() > 5 && path.substr(path.size() - 5) == ".json";
    const std::size_t first = text.find_first_not_of(" \t\r\n");
    const bool looks_json = first != std::string::npos && text[first] == '{';
    if (json_ext || looks_json) {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw InvalidInput("config parse error in " + path + ": " + e.what());
        }
    }
    return parse_toml(text);
}

std::vector<FaultAction> parse_fault_script(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("cannot open fault script: " + path);
    std::vector<FaultAction> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string t, d, a;
        if (!std::getline(ls, t, ',') || !std::getline(ls, d, ',') ||
            !std::getline(ls, a))
            throw InvalidInput("fault script: bad line " + std::to_string(lineno));
        FaultAction fa;
        fa.time_ms = std::stod(trim(t));
        fa.device = std::stoi(trim(d));
        const std::string act = trim(a);
        if (act == "drop") fa.drop = true;
        else if (act == "reconnect") fa.drop = false;
        else
            throw InvalidInput("fault script: action must be drop|reconnect at line " +
                               std::to_string(lineno));
        out.push_back(fa);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const FaultAction& x, const FaultAction& y) {
                         return x.time_ms < y.time_ms;
                     });
    return out;
}

std::vector<std::uint64_t> parse_seed_spec(const std::string& spec) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(spec);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) continue;
        const auto dots = part.find("..");
        if (dots != std::string::npos) {
            const std::uint64_t lo = std::stoull(trim(part.substr(0, dots)));
            const std::uint64_t hi = std::stoull(trim(part.substr(dots + 2)));
            if (hi < lo) throw InvalidInput("seed range is reversed: " + part);
            for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
        } else {
            out.push_back(std::stoull(part));
        }
    }
    if (out.empty()) throw InvalidInput("no seeds in spec: " + spec);
    return out;
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "dge") return Strategy::DGE;
    if (s == "tge") return Strategy::TGE;
    if (s == "tdge") return Strategy::TDGE;
    throw InvalidInput("unknown exploration strategy: " + s);
}

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::DGE: return "dge";
        case Strategy::TGE: return "tge";
        case Strategy::TDGE: return "tdge";
    }
    return "?";
}

RLConfig rl_config_from_json(const nlohmann::json& j, RLConfig base) {
    RLConfig c = base;
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.rho = j.value("rho", c.rho);
    c.epsilon0 = j.value("epsilon0", c.epsilon0);
    c.epsilon_new = j.value("epsilon_new", c.epsilon_new);
    c.decay = j.value("decay", c.decay);
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy"));
    c.phi = j.value("phi", c.phi);
    c.max_epoch = j.value("max_epoch", c.max_epoch);
    c.discount = j.value("discount", c.discount);
    c.learn_rate = j.value("learn_rate", c.learn_rate);
    c.hidden = j.value("hidden", c.hidden);
    c.target_sync = j.value("target_sync", c.target_sync);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.validate();
    return c;
}

nlohmann::json rl_config_to_json(const RLConfig& c) {
    return {{"alpha", c.alpha},
            {"beta", c.beta},
            {"rho", c.rho},
            {"epsilon0", c.epsilon0},
            {"epsilon_new", c.epsilon_new},
            {"decay", c.decay},
            {"strategy", to_string(c.strategy)},
            {"phi", c.phi},
            {"max_epoch", c.max_epoch},
            {"discount", c.discount},
            {"learn_rate", c.learn_rate},
            {"hidden", c.hidden},
            {"target_sync", c.target_sync},
            {"replay_capacity", c.replay_capacity},
            {"batch_size", c.batch_size}};
}

void apply_config(const nlohmann::json& doc, SimConfig& cfg, TrainHyper& hyper) {
    nlohmann::json merged = cfg.to_json();
    for (const auto& [k, v] : doc.items()) {
        if (k == "eta" || k == "epochs" || k == "agg_rounds_per_epoch" || k == "rl")
            continue;
        merged[k] = v;
    }
    const RLConfig rl = cfg.rl;
    cfg = SimConfig::from_json(merged);
    cfg.rl = doc.contains("rl") ? rl_config_from_json(doc.at("rl"), rl) : rl;
    hyper.eta = doc.value("eta", hyper.eta);
    hyper.epochs = doc.value("epochs", hyper.epochs);
    hyper.agg_rounds_per_epoch = doc.value("agg_rounds_per_epoch", hyper.agg_rounds_per_epoch);
    cfg.validate();
    validate_hyper(hyper);
}

} // namespace chainreduce
