#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "flags/data.hpp"
#include "flags/eval.hpp"
#include "flags/model.hpp"
#include "flags/pairs.hpp"
#include "flags/queue.hpp"
#include "flags/train.hpp"

namespace flags {

inline constexpr std::string_view kCheckpointVersion = "flags-ckpt-v1";
inline constexpr std::string_view kDatasetVersion = "flags-data-v1";
inline constexpr std::string_view kManifestVersion = "flags-manifest-v1";
inline constexpr std::string_view kFeaturesVersion = "flags-features-v1";
inline constexpr std::string_view kReportVersion = "flags-report-v1";

// Rank 1 -> flat array, rank 2 -> array of row arrays. A matrix with no rows
// comes back as an empty vector; callers that need the width store it.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

nlohmann::json queue_to_json(const KeyQueue& q);
KeyQueue queue_from_json(const nlohmann::json& j, Branch branch);

// {version, config, query_encoder, key_encoder, heads, momentum_m, queues,
//  velocity, rng_state, step, epoch}
nlohmann::json checkpoint_to_json(const TrainState& state);
TrainState checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

// JSON lines: a header object (version, seed, config, factor matrices, count)
// followed by one {id, class, context, x} object per sample.
std::string dataset_to_jsonl(const SyntheticDataset& data);
SyntheticDataset dataset_from_jsonl(std::string_view text);
void save_dataset(const SyntheticDataset& data, const std::filesystem::path& path);
SyntheticDataset load_dataset(const std::filesystem::path& path);

// JSON lines, one {schema, id, class, global: [a, b], local: [c, d]} per query.
std::string manifest_to_jsonl(const PairManifest& manifest);
PairManifest manifest_from_jsonl(std::string_view text);
void save_manifest(const PairManifest& manifest, const std::filesystem::path& path);
PairManifest load_manifest(const std::filesystem::path& path);

// JSON lines: header {version, provenance, dim, count} then {id, class, f}.
std::string features_to_jsonl(const FeatureTable& table);
FeatureTable features_from_jsonl(std::string_view text);
void save_features(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable load_features(const std::filesystem::path& path);

nlohmann::json probe_to_json(const ProbeResult& probe);
nlohmann::json report_to_json(const EmbeddingReport& report);

// Writes to a sibling temporary, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace flags
