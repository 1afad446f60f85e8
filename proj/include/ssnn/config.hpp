#pragma once

#include <string>
#include <vector>

#include "ssnn/data.hpp"
#include "ssnn/training.hpp"

namespace ssnn {

// Bad command line or config key; exits with code 1.
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat `section.key = value` configuration with `#` comments. Every
// TrainConfig and PendulumConfig field is addressable; flags override file
// values by being applied later.
struct CliConfig {
    TrainConfig train;
    PendulumConfig pendulum;

    void apply(const std::string& key, const std::string& value);
    void apply_assignment(const std::string& assignment);  // "key=value"
    void load_file(const std::string& path);

    static const std::vector<std::string>& known_keys();
};

}  // namespace ssnn
