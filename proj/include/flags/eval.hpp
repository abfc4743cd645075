#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flags/data.hpp"
#include "flags/model.hpp"
#include "flags/tensor.hpp"

namespace flags {

struct ProbeConfig {
    double lr = 0.1;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double train_fraction = 0.8;
    // z-score features with train-split statistics before fitting.
    bool standardize = true;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ProbeConfig&) const = default;
};

struct ProbeResult {
    double top1_accuracy = 0.0;  // eval split
    double train_accuracy = 0.0;
    std::vector<double> per_class_accuracy;  // eval split; NaN for classes absent from eval
    // confusion[true][predicted], eval split.
    std::vector<std::vector<std::size_t>> confusion;
    Tensor weight;  // [feature_dim x num_classes]
    Tensor bias;    // [num_classes]
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> eval_ids;
};

// Softmax-regression probe on fixed features (row i labelled labels[i]).
// Seeded shuffle, first train_fraction of rows train, the rest evaluate.
// Throws SplitError when a class in the eval split has no training rows.
ProbeResult linear_probe(const Tensor& features, std::span<const std::size_t> labels,
                         std::size_t num_classes, const ProbeConfig& config);

// Frozen-encoder probe: features come from `encoder`, which is never
// modified.
ProbeResult linear_probe(const EncoderParams& encoder, const SyntheticDataset& data,
                         const ProbeConfig& config);

struct SubspaceStats {
    double alignment = 0.0;   // mean |f(a) - f(b)|^2 over two augmented views
    double uniformity = 0.0;  // log mean exp(-2 |f(x) - f(y)|^2) over distinct pairs
    double within_class_cos = 0.0;
    double between_class_cos = 0.0;
    // Restricted to same-class pairs.
    double same_context_cos = 0.0;
    double diff_context_cos = 0.0;
    double context_gap() const { return same_context_cos - diff_context_cos; }
};

struct EmbeddingReport {
    SubspaceStats global;
    SubspaceStats local;
};

struct ReportConfig {
    AugmentationConfig augment;
    std::uint64_t seed = 0;

    bool operator==(const ReportConfig&) const = default;
};

// Pair statistics over every distinct pair of an [n x d] embedding block.
// Cosines use the rows as given (project() output is already unit norm).
SubspaceStats pair_statistics(const Tensor& embeddings, std::span<const std::size_t> class_ids,
                              std::span<const std::size_t> context_ids);

double alignment(const Tensor& a, const Tensor& b);

// Query encoder through the global and local query heads.
EmbeddingReport embedding_report(const ModelState& model, const SyntheticDataset& data,
                                 const ReportConfig& config);

}  // namespace flags
