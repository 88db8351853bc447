#pragma once

#include "json.hpp"

#include <string>

namespace covfk {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunResult {
    nlohmann::json doc;
    bool ok = true;
};

// command in {"fk", "trace", "chern", "validate"}; throws ConfigError on
// schema violations; runtime/acceptance failures come back with ok = false
RunResult run_command(const std::string& command, const nlohmann::json& config);

// full CLI: covfk fk|trace|chern|validate --config path.json [--seed N]
// [--workers N] [--out path.json]; exit codes 0 success, 1 runtime failure,
// 2 config error
int cli_main(int argc, char** argv);

} // namespace covfk
