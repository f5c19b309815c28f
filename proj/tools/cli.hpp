#pragma once

// Command-line front end. Kept in a library so the test suite can drive it
// in-process.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asap/data.hpp"
#include "asap/model.hpp"
#include "asap/pipeline.hpp"
#include "asap/training.hpp"

namespace asap::cli {

enum ExitCode : int { kSuccess = 0, kValidationError = 1, kRuntimeError = 2 };

struct DataPaths {
    /// Either a single corpus split by `fractions`...
    std::string corpus;
    std::array<double, 3> fractions{0.8, 0.1, 0.1};
    /// ...or explicit split files (validation and test optional).
    std::string train;
    std::string validation;
    std::string test;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    ProviderConfig provider;
    DataPaths data;
    std::optional<std::array<std::size_t, 5>> rating_map;
    std::string output_dir = "runs/default";

    RatingMap ratings() const;
    nlohmann::json to_json() const;
};

/// Applies "a.b.c=value" assignments. Values are parsed as JSON when possible, else taken as strings.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& assignments);

/// Strict parse: unknown keys and invalid values raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);

/// Reads a JSON file, applies overrides and the ASAP_SEED environment variable.
nlohmann::json load_config_json(const std::filesystem::path& path, const std::vector<std::string>& overrides);

DatasetSplits load_splits(const RunConfig& config);

/// Runs the CLI; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace asap::cli
