#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "flags/data.hpp"
#include "flags/eval.hpp"
#include "flags/pairs.hpp"
#include "flags/train.hpp"

namespace flags {

struct PairsConfig {
    // aug_only epochs used to train the mining encoder when no checkpoint is given.
    std::size_t bootstrap_epochs = 20;
    LocalPairPolicy policy = LocalPairPolicy::median;

    bool operator==(const PairsConfig&) const = default;
};

// Everything a pipeline run needs. JSON layout:
//   {"seed": .., "data": {..}, "augment": {..}, "model": {..}, "train": {..},
//    "pairs": {..}, "eval": {..}}
// Every field is optional; unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    TrainConfig train;  // carries model and augment
    PairsConfig pairs;
    ProbeConfig probe;

    // Copies `seed` into the seeded sub-configs.
    void propagate_seed();
    // Validates every section plus cross-section agreement (model.input_dim ==
    // data.input_dim). Throws ConfigError.
    void validate() const;

    ReportConfig report() const { return {train.augment, seed}; }

    bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& config);
// Strict: unknown sections or keys and wrongly typed values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);
nlohmann::json data_config_to_json(const DataConfig& config);
DataConfig data_config_from_json(const nlohmann::json& doc);

// Applies "section.key=value" to a config document. The value is parsed as
// JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// One line per field: name, default, description.
std::string describe_config_fields();

std::string_view to_string(Reduction r);
std::string_view to_string(LocalPairPolicy p);

}  // namespace flags
