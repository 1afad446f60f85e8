#include "ssnn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

namespace ssnn {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t");
    size_t e = s.find_last_not_of(" \t");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw usage_error("config key '" + key + "': expected a real number, got '" + value + "'");
    }
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        long long v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw usage_error("config key '" + key + "': expected an integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw usage_error("config key '" + key + "': expected a boolean, got '" + value + "'");
}

using Setter = std::function<void(CliConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& registry() {
    static const std::map<std::string, Setter> table = {
        {"train.batch_size", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = static_cast<int>(parse_int(k, v)); }},
        {"train.iterations", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.iterations = static_cast<int>(parse_int(k, v)); }},
        {"train.learning_rate", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.learning_rate = parse_real(k, v); }},
        {"train.beta1", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.beta1 = parse_real(k, v); }},
        {"train.beta2", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.beta2 = parse_real(k, v); }},
        {"train.adam_eps", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.adam_eps = parse_real(k, v); }},
        {"train.tau_start", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.tau_start = parse_real(k, v); }},
        {"train.tau_end", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.tau_end = parse_real(k, v); }},
        {"train.anneal", [](CliConfig& c, const std::string&, const std::string& v) { c.train.anneal = v; }},
        {"train.mode",
         [](CliConfig& c, const std::string& k, const std::string& v) {
             if (v == "hard-st")
                 c.train.mode = TrainMode::HardST;
             else if (v == "relaxed")
                 c.train.mode = TrainMode::Relaxed;
             else
                 throw usage_error("config key '" + k + "': expected hard-st or relaxed, got '" + v + "'");
         }},
        {"train.clip_norm", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.clip_norm = parse_real(k, v); }},
        {"train.seed", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
        {"train.chunk_len", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.chunk_len = static_cast<int>(parse_int(k, v)); }},
        {"train.sample_count", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.sample_count = static_cast<int>(parse_int(k, v)); }},
        {"train.table_lr_scale", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.table_lr_scale = parse_real(k, v); }},
        {"train.no_self_transitions", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.no_self_transitions = parse_bool(k, v); }},
        {"train.checkpoint_every", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.checkpoint_every = static_cast<int>(parse_int(k, v)); }},
        {"train.K", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.dims.K = static_cast<int>(parse_int(k, v)); }},
        {"train.M", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.dims.M = static_cast<int>(parse_int(k, v)); }},
        {"train.m", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.dims.m = static_cast<int>(parse_int(k, v)); }},
        {"train.h", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.dims.h = static_cast<int>(parse_int(k, v)); }},
        {"train.e", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.dims.e = static_cast<int>(parse_int(k, v)); }},
        {"train.q", [](CliConfig& c, const std::string& k, const std::string& v) { c.train.dims.q = static_cast<int>(parse_int(k, v)); }},
        {"pendulum.mass", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.mass = parse_real(k, v); }},
        {"pendulum.length", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.length = parse_real(k, v); }},
        {"pendulum.damping", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.damping = parse_real(k, v); }},
        {"pendulum.gravity", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.gravity = parse_real(k, v); }},
        {"pendulum.torque_enabled", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.torque_enabled = parse_bool(k, v); }},
        {"pendulum.torque_limit", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.torque_limit = parse_real(k, v); }},
        {"pendulum.torque_hold_seconds", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.torque_hold_seconds = parse_real(k, v); }},
        {"pendulum.dt", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.dt = parse_real(k, v); }},
        {"pendulum.duration", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.duration = parse_real(k, v); }},
        {"pendulum.mode",
         [](CliConfig& c, const std::string& k, const std::string& v) {
             if (v == "trig-features")
                 c.pendulum.mode = ObservationMode::TrigFeatures;
             else if (v == "rendered-image")
                 c.pendulum.mode = ObservationMode::RenderedImage;
             else
                 throw usage_error("config key '" + k + "': expected trig-features or rendered-image, got '" + v + "'");
         }},
        {"pendulum.image_side", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.image_side = static_cast<int>(parse_int(k, v)); }},
        {"pendulum.noise_std", [](CliConfig& c, const std::string& k, const std::string& v) { c.pendulum.noise_std = parse_real(k, v); }},
    };
    return table;
}

}  // namespace

const std::vector<std::string>& CliConfig::known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [key, setter] : registry()) out.push_back(key);
        return out;
    }();
    return keys;
}

void CliConfig::apply(const std::string& key, const std::string& value) {
    auto it = registry().find(key);
    if (it == registry().end()) {
        std::string msg = "unknown config key '" + key + "'; valid keys:";
        for (const std::string& k : known_keys()) msg += "\n  " + k;
        throw usage_error(msg);
    }
    it->second(*this, key, value);
}

void CliConfig::apply_assignment(const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw usage_error("expected key=value, got '" + assignment + "'");
    apply(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void CliConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw usage_error("'" + path + "' line " + std::to_string(lineno) + ": expected key = value");
        apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

}  // namespace ssnn
