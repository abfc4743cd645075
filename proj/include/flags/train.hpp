#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flags/data.hpp"
#include "flags/loss.hpp"
#include "flags/model.hpp"
#include "flags/pairs.hpp"
#include "flags/queue.hpp"
#include "flags/rng.hpp"

namespace flags {

// Which positive sets are populated.
//   aug_only:         P_g = {aug}, no local branch (MoCo-style baseline)
//   aug_global:       P_g = {g0, g1, aug}, no local branch
//   aug_global_local: P_g = {g0, g1, aug}, P_l = {l0, l1}
enum class TrainingMode { aug_only, aug_global, aug_global_local };

// Throws ConfigError on an unknown name.
TrainingMode parse_training_mode(std::string_view name);
std::string_view mode_name(TrainingMode mode);

inline bool uses_global_pairs(TrainingMode m) { return m != TrainingMode::aug_only; }
inline bool uses_local_branch(TrainingMode m) { return m == TrainingMode::aug_global_local; }

struct TrainConfig {
    ModelConfig model;
    AugmentationConfig augment;
    TrainingMode mode = TrainingMode::aug_global_local;
    double lr = 0.03;
    double sgd_momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t batch_size = 32;
    std::size_t epochs = 200;
    double tau = 0.2;
    std::size_t queue_capacity = 4096;
    double local_weight = 1.0;
    Reduction reduction = Reduction::sum;
    // Write an intermediate checkpoint every N epochs; 0 writes only the final one.
    std::size_t checkpoint_every = 0;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct StepMetrics {
    std::uint64_t step = 0;
    double loss_total = 0.0;
    double loss_global = 0.0;
    double loss_local = 0.0;
    std::size_t global_queue_size = 0;
    std::size_t local_queue_size = 0;

    bool operator==(const StepMetrics&) const = default;
};

struct TrainState {
    TrainConfig config;
    ModelState model;
    std::vector<Tensor> velocity;  // matches query_parameters(model)
    KeyQueue global_queue;
    KeyQueue local_queue;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    Rng rng;

    bool operator==(const TrainState&) const = default;
};

// Fresh model (seeded by config.seed), zero velocity, empty queues.
TrainState init_train_state(const TrainConfig& config);

// One step's network inputs, already augmented. Blocks a mode does not use
// stay empty.
struct TrainBatch {
    Tensor query;
    Tensor aug;
    Tensor global0, global1;
    Tensor local0, local1;
    Tensor global_negatives;  // [K_g x embed]
    Tensor local_negatives;   // [K_l x embed]
};

// Draws augmentations from `rng` in a fixed order and snapshots the queues.
TrainBatch assemble_batch(const TrainState& state, const SyntheticDataset& data,
                          const PairManifest& manifest, std::span<const std::size_t> query_ids,
                          Rng& rng);

struct StepResult {
    double loss_total = 0.0;
    double loss_global = 0.0;
    double loss_local = 0.0;
    std::vector<Tensor> grads;  // matches query_parameters(model)
    // Key-side embeddings, for enqueueing.
    Tensor key_aug, key_global0, key_global1, key_local0, key_local1;
};

// Forward of query side (recorded) and key side (constants), combined loss,
// backward. Gradients reach query-side parameters only.
StepResult loss_gradients(const ModelState& model, const TrainConfig& config,
                          const TrainBatch& batch);

// Forward only; the finite-difference oracle evaluates this.
double evaluate_loss(const ModelState& model, const TrainConfig& config, const TrainBatch& batch);

// Forward/backward, SGD-momentum step on the query side (v <- mu v + g;
// theta <- theta - lr v; skipped entirely when lr == 0), momentum update of
// the key side, enqueue of the new keys.
StepMetrics train_step(TrainState& state, const SyntheticDataset& data,
                       const PairManifest& manifest, std::span<const std::size_t> query_ids);

using StepObserver = std::function<void(const StepMetrics&)>;
using EpochObserver = std::function<void(const TrainState&)>;

// Runs the remaining epochs of `state.config`, reshuffling query order each
// epoch with the state's rng.
void run_training(TrainState& state, const SyntheticDataset& data, const PairManifest& manifest,
                  const StepObserver& on_step = {}, const EpochObserver& on_epoch = {});

// Full training run writing <out>/metrics.csv and <out>/checkpoint.json (plus
// checkpoint-epoch<N>.json when checkpoint_every > 0). Returns the final
// checkpoint path. Files are replaced atomically. `on_step` also sees every row.
std::filesystem::path train(const TrainConfig& config, const SyntheticDataset& data,
                            const PairManifest& manifest, const std::filesystem::path& out_dir,
                            const StepObserver& on_step = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

}  // namespace flags
