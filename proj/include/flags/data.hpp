#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flags/rng.hpp"
#include "flags/tensor.hpp"

namespace flags {

struct DataConfig {
    std::size_t num_classes = 10;
    // Pool of background factors shared across classes.
    std::size_t num_contexts = 8;
    // Class c uses contexts (c + j) mod num_contexts for j < contexts_per_class.
    std::size_t contexts_per_class = 4;
    // Split evenly (round-robin) over the class's contexts.
    std::size_t samples_per_class = 120;
    std::size_t input_dim = 128;
    double noise_sigma = 0.1;

    void validate() const;
    bool operator==(const DataConfig&) const = default;
};

struct Sample {
    std::size_t id = 0;
    std::size_t class_id = 0;
    std::size_t context_id = 0;
    std::vector<double> x;

    bool operator==(const Sample&) const = default;
};

// x = class_factors[class] + context_factors[context] + N(0, sigma^2 I).
// All factor rows are mutually orthonormal.
struct SyntheticDataset {
    DataConfig config;
    std::uint64_t seed = 0;
    Tensor class_factors;    // [num_classes x input_dim]
    Tensor context_factors;  // [num_contexts x input_dim]
    std::vector<Sample> samples;  // samples[i].id == i

    std::size_t input_dim() const { return config.input_dim; }
    std::size_t num_classes() const { return config.num_classes; }

    // Rows for the given sample ids, [ids.size() x input_dim].
    Tensor inputs(std::span<const std::size_t> ids) const;
    Tensor all_inputs() const;

    bool operator==(const SyntheticDataset&) const = default;
};

// Throws ConfigError on non-positive counts, samples_per_class < 5,
// contexts_per_class > num_contexts, or input_dim < num_classes + num_contexts.
SyntheticDataset gen_synthetic(const DataConfig& config, std::uint64_t seed);

// Throws IntegrityError if ids are not 0..n-1, labels are out of range, or a
// row has the wrong width.
void validate_dataset(const SyntheticDataset& data);

struct AugmentationConfig {
    double noise_sigma = 0.3;
    double mask_fraction = 0.5;  // in [0, 1)

    void validate() const;
    bool operator==(const AugmentationConfig&) const = default;
};

// Additive Gaussian noise, then zeroes round(mask_fraction * d) coordinates
// chosen uniformly without replacement.
std::vector<double> augment(std::span<const double> x, const AugmentationConfig& cfg, Rng& rng);

// Augments every row of a [n x d] block.
Tensor augment_rows(const Tensor& xs, const AugmentationConfig& cfg, Rng& rng);

}  // namespace flags
