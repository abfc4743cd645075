#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flags/config.hpp"
#include "flags/data.hpp"
#include "flags/eval.hpp"
#include "flags/model.hpp"
#include "flags/pairs.hpp"
#include "flags/train.hpp"

namespace flags {

// Feature source for mining. With `encoder` unset, an aug_only model is
// trained for pairs.bootstrap_epochs first and its query encoder is used.
struct MiningResult {
    FeatureTable features;
    PairManifest manifest;
};

MiningResult mine_pairs(const RunConfig& config, const SyntheticDataset& data,
                        const EncoderParams* encoder = nullptr,
                        const std::string& provenance = "encoder");

// Bootstrap encoder on its own (the aug_only run mine_pairs falls back to).
EncoderParams bootstrap_encoder(const RunConfig& config, const SyntheticDataset& data);

struct ModeOutcome {
    TrainingMode mode = TrainingMode::aug_only;
    double first_loss = 0.0;
    double final_loss = 0.0;
    ProbeResult probe;
    EmbeddingReport report;
    std::vector<StepMetrics> metrics;
    ModelState model;  // final weights
};

// Trains `mode` from scratch under `config`, then probes and reports on the
// final query encoder. When `out_dir` is set the usual train artifacts land
// there.
ModeOutcome run_mode(const RunConfig& config, const SyntheticDataset& data,
                     const PairManifest& manifest, TrainingMode mode,
                     const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct ThresholdCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ReproResult {
    std::array<ModeOutcome, 3> rows;  // aug_only, aug_global, aug_global_local
    std::vector<ThresholdCheck> checks;

    bool pass() const;
    // Fixed-width table: mode, probe accuracy, global/local context gap.
    std::string table() const;
};

// Probe ordering and subspace separation thresholds over the three rows.
std::vector<ThresholdCheck> repro_checks(const std::array<ModeOutcome, 3>& rows);

// gen-data, mining, then the three training modes. Writes data.jsonl,
// pairs.jsonl, features.jsonl, <mode>/..., table.txt and config.json under
// `out_dir` when given. `on_stage` is told the name of each stage as it starts.
ReproResult repro(const RunConfig& config,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const std::string&)>& on_stage = {});

// Report JSON for one checkpoint: probe plus both subspaces.
nlohmann::json eval_report(const RunConfig& config, const TrainState& checkpoint,
                           const SyntheticDataset& data);

}  // namespace flags
