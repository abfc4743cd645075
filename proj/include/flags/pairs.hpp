#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flags/data.hpp"
#include "flags/model.hpp"
#include "flags/tensor.hpp"

namespace flags {

// Encoder features of every sample, used for offline pair mining.
struct FeatureTable {
    std::string provenance;
    std::vector<std::size_t> sample_ids;
    std::vector<std::size_t> class_ids;
    Tensor features;  // [n x dim], row i belongs to sample_ids[i]

    std::size_t size() const { return sample_ids.size(); }
    std::size_t dim() const { return features.cols(); }

    bool operator==(const FeatureTable&) const = default;
};

// Throws IntegrityError on duplicate ids, length mismatches, or non-finite
// features.
void validate_feature_table(const FeatureTable& table);

// Query-encoder features of every sample, no gradient recording. Throws
// ConfigError when the encoder's input width differs from the dataset's.
FeatureTable compute_features(const EncoderParams& encoder, const SyntheticDataset& data,
                              std::string provenance);

struct RankedSample {
    std::size_t id = 0;
    double similarity = 0.0;

    bool operator==(const RankedSample&) const = default;
};

// Same-class samples other than the query, by descending cosine similarity to
// the query; ties go to the smaller sample id. Throws
// InsufficientClassSizeError for a class of fewer than 2 members and
// DegenerateSimilarityError naming any zero-norm feature involved.
std::vector<RankedSample> rank_within_class(const FeatureTable& table, std::size_t query_id);

// Where the local pair sits in the ranked list.
enum class LocalPairPolicy {
    // ranked[mid], ranked[mid + 1] with mid = floor((n - 2) / 2); falls back to
    // ranked[2], ranked[3] when mid would overlap the global pair.
    median,
};

struct PairSelection {
    std::array<std::size_t, 2> global{};
    std::array<std::size_t, 2> local{};

    bool operator==(const PairSelection&) const = default;
};

// Top-2 as the global pair, the median-straddling pair as the local pair.
// Throws InsufficientClassSizeError (mentioning `class_id`) when fewer than 4
// candidates are ranked.
PairSelection select_pairs(std::span<const RankedSample> ranked,
                           LocalPairPolicy policy = LocalPairPolicy::median,
                           std::size_t class_id = 0);

struct ManifestEntry {
    std::size_t id = 0;
    std::size_t class_id = 0;
    std::array<std::size_t, 2> global{};
    std::array<std::size_t, 2> local{};

    bool operator==(const ManifestEntry&) const = default;
};

struct PairManifest {
    std::vector<ManifestEntry> entries;  // ascending id

    const ManifestEntry& at(std::size_t id) const;

    bool operator==(const PairManifest&) const = default;
};

// One entry per sample. All-or-nothing: an undersized class fails the whole
// build with InsufficientClassSizeError.
PairManifest build_manifest(const FeatureTable& table,
                            LocalPairPolicy policy = LocalPairPolicy::median);

// Referential integrity against a dataset: every id resolves, classes match,
// no self pairs. Throws IntegrityError.
void validate_manifest(const PairManifest& manifest, const SyntheticDataset& data);

}  // namespace flags
