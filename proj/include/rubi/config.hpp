#pragma once

#include "rubi/datagen.hpp"
#include "rubi/model.hpp"
#include "rubi/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace rubi {

/// Raised for malformed or inconsistent run configuration documents.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A run configuration document: sections dataset, model, train, strategy,
/// and output_dir. Every field has a default except dataset.seed and
/// train.seed. The strategy section is stored in train.strategy.
struct RunConfig {
    DatasetSpec dataset;
    ModelConfig model;
    TrainConfig train;
    std::string output_dir = "runs";
};

/// Strict parse: unknown keys, wrong types, missing seeds and invalid values
/// all raise ConfigError naming the offending key.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved document (every field present), suitable for parse_config.
nlohmann::json config_to_json(const RunConfig& config);

/// Hex FNV-1a digest of the resolved document without output_dir and
/// train.seed: two runs share a digest iff only their seed differs.
std::string config_digest(const RunConfig& config);

/// Table label of a configuration, e.g. "rubi(sigmoid,product)" or
/// "classical+qtype_balanced".
std::string run_label(const RunConfig& config);

/// "<label>-<digest prefix>-s<seed>", filesystem safe.
std::string run_id(const RunConfig& config);

/// output_dir, or the RUBI_BENCH_OUT environment variable when set.
std::filesystem::path resolve_output_dir(const RunConfig& config);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& model);
nlohmann::json to_json(const StrategyConfig& strategy);

} // namespace rubi
