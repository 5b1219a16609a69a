#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "lrco/data.hpp"
#include "lrco/trainer.hpp"

namespace lrco {

// Everything one CLI invocation needs. model.input_dim and
// model.num_classes always follow the benchmark.
struct RunConfig {
    TrainConfig train;
    BenchmarkSpec benchmark;
    std::string run_id = "run";
    std::string data_dir;  // load datasets from here instead of regenerating

    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message);
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Every recognised key, in canonical order.
std::vector<std::string> config_keys();

/// Sets one key from its text form. Unknown keys and malformed values throw
/// ConfigError.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// `key = value` lines; blank lines and `#` comments ignored; a key may
/// appear once.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// One `key=value` line per key, canonical order, all keys present.
std::string canonical_config(const RunConfig& config);
std::string config_hash(const RunConfig& config);

}  // namespace lrco
