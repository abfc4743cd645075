#include "flags/pipeline.hpp"

#include <cstdio>
#include <sstream>

#include "flags/io.hpp"

namespace flags {

EncoderParams bootstrap_encoder(const RunConfig& config, const SyntheticDataset& data) {
    TrainConfig tc = config.train;
    tc.mode = TrainingMode::aug_only;
    tc.epochs = config.pairs.bootstrap_epochs;
    tc.checkpoint_every = 0;
    tc.seed = mix_seed(config.seed, 0x626f6f74ULL);
    TrainState state = init_train_state(tc);
    run_training(state, data, PairManifest{});
    return state.model.query_encoder;
}

MiningResult mine_pairs(const RunConfig& config, const SyntheticDataset& data,
                        const EncoderParams* encoder, const std::string& provenance) {
    MiningResult r;
    if (encoder != nullptr) {
        r.features = compute_features(*encoder, data, provenance);
    } else {
        const EncoderParams boot = bootstrap_encoder(config, data);
        r.features = compute_features(
            boot, data,
            "bootstrap aug_only epochs=" + std::to_string(config.pairs.bootstrap_epochs) +
                " seed=" + std::to_string(config.seed));
    }
    r.manifest = build_manifest(r.features, config.pairs.policy);
    return r;
}

ModeOutcome run_mode(const RunConfig& config, const SyntheticDataset& data,
                     const PairManifest& manifest, TrainingMode mode,
                     const std::optional<std::filesystem::path>& out_dir) {
    TrainConfig tc = config.train;
    tc.mode = mode;
    ModeOutcome out;
    out.mode = mode;
    TrainState state = init_train_state(tc);
    const StepObserver record = [&out](const StepMetrics& m) { out.metrics.push_back(m); };
    if (out_dir) {
        state = load_checkpoint(train(tc, data, manifest, *out_dir, record));
    } else {
        run_training(state, data, manifest, record);
    }
    if (!out.metrics.empty()) {
        out.first_loss = out.metrics.front().loss_total;
        out.final_loss = out.metrics.back().loss_total;
    }
    out.probe = linear_probe(state.model.query_encoder, data, config.probe);
    out.report = embedding_report(state.model, data, config.report());
    out.model = std::move(state.model);
    return out;
}

namespace {

// Thresholds of the three-mode comparison.
constexpr double kMinProbeAccuracy = 0.5;
constexpr double kLocalToGlobalRatio = 0.9;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::vector<ThresholdCheck> repro_checks(const std::array<ModeOutcome, 3>& rows) {
    const double a_only = rows[0].probe.top1_accuracy;
    const double a_glob = rows[1].probe.top1_accuracy;
    const double a_gl = rows[2].probe.top1_accuracy;
    const double gap_g = rows[2].report.global.context_gap();
    const double gap_l = rows[2].report.local.context_gap();
    return {
        {"aug_global probe > aug_only probe", a_glob > a_only, fmt(a_glob) + " vs " + fmt(a_only)},
        {"aug_only probe >= 0.5", a_only >= kMinProbeAccuracy, fmt(a_only)},
        {"aug_global probe >= 0.5", a_glob >= kMinProbeAccuracy, fmt(a_glob)},
        {"aug_global_local probe >= 0.9 x aug_global", a_gl >= kLocalToGlobalRatio * a_glob,
         fmt(a_gl) + " vs " + fmt(kLocalToGlobalRatio * a_glob)},
        {"global context gap > local context gap", gap_g > gap_l, fmt(gap_g) + " vs " + fmt(gap_l)},
    };
}

bool ReproResult::pass() const {
    for (const ThresholdCheck& c : checks) {
        if (!c.pass) {
            return false;
        }
    }
    return true;
}

std::string ReproResult::table() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-18s %10s %12s %12s\n", "mode", "probe_acc", "ctx_gap_g",
                  "ctx_gap_l");
    out << buf;
    for (const ModeOutcome& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-18s %10.4f %12.4f %12.4f\n",
                      std::string(mode_name(r.mode)).c_str(), r.probe.top1_accuracy,
                      r.report.global.context_gap(), r.report.local.context_gap());
        out << buf;
    }
    return out.str();
}

ReproResult repro(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const std::string&)>& on_stage) {
    auto stage = [&on_stage](const std::string& name) {
        if (on_stage) {
            on_stage(name);
        }
    };
    config.validate();
    stage("gen-data");
    const SyntheticDataset data = gen_synthetic(config.data, config.seed);
    stage("gen-pairs");
    const MiningResult mined = mine_pairs(config, data);
    if (out_dir) {
        write_file_atomic(*out_dir / "config.json", to_json(config).dump(2) + "\n");
        save_dataset(data, *out_dir / "data.jsonl");
        save_features(mined.features, *out_dir / "features.jsonl");
        save_manifest(mined.manifest, *out_dir / "pairs.jsonl");
    }
    ReproResult r;
    const TrainingMode modes[] = {TrainingMode::aug_only, TrainingMode::aug_global,
                                  TrainingMode::aug_global_local};
    for (std::size_t i = 0; i < 3; ++i) {
        std::optional<std::filesystem::path> dir;
        if (out_dir) {
            dir = *out_dir / std::string(mode_name(modes[i]));
        }
        stage("train " + std::string(mode_name(modes[i])));
        r.rows[i] = run_mode(config, data, mined.manifest, modes[i], dir);
    }
    r.checks = repro_checks(r.rows);
    if (out_dir) {
        write_file_atomic(*out_dir / "table.txt", r.table());
    }
    return r;
}

nlohmann::json eval_report(const RunConfig& config, const TrainState& checkpoint,
                           const SyntheticDataset& data) {
    const ProbeResult probe = linear_probe(checkpoint.model.query_encoder, data, config.probe);
    const EmbeddingReport report = embedding_report(checkpoint.model, data, config.report());
    nlohmann::json j = report_to_json(report);
    j["version"] = std::string(kReportVersion);
    j["mode"] = std::string(mode_name(checkpoint.config.mode));
    j["step"] = checkpoint.step;
    j["probe"] = probe_to_json(probe);
    return j;
}

}  // namespace flags
