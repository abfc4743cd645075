#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flags/error.hpp"
#include "flags/finite_diff.hpp"
#include "flags/io.hpp"
#include "flags/train.hpp"

using namespace flags;
namespace fs = std::filesystem;

namespace {

DataConfig tiny_data() {
    DataConfig c;
    c.num_classes = 3;
    c.num_contexts = 3;
    c.contexts_per_class = 2;
    c.samples_per_class = 10;
    c.input_dim = 8;
    return c;
}

TrainConfig tiny_train(TrainingMode mode) {
    TrainConfig c;
    c.model.input_dim = 8;
    c.model.hidden_dim = 6;
    c.model.hidden_layers = 1;
    c.model.feature_dim = 5;
    c.model.head_hidden_dim = 4;
    c.model.embed_dim = 3;
    c.model.momentum_m = 0.9;
    c.mode = mode;
    c.batch_size = 4;
    c.epochs = 2;
    c.queue_capacity = 16;
    c.seed = 11;
    return c;
}

struct Fixture {
    SyntheticDataset data = gen_synthetic(tiny_data(), 3);
    PairManifest manifest;

    Fixture() {
        ModelConfig mc = tiny_train(TrainingMode::aug_only).model;
        manifest = build_manifest(compute_features(init_model(mc, 5).query_encoder, data, "init"));
    }
};

constexpr TrainingMode kModes[] = {TrainingMode::aug_only, TrainingMode::aug_global,
                                   TrainingMode::aug_global_local};

std::vector<Tensor> copy_of(const std::vector<const Tensor*>& ps) {
    std::vector<Tensor> out;
    for (const Tensor* p : ps) {
        out.push_back(*p);
    }
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(TrainConfig, Validation) {
    auto bad = [](auto edit) {
        TrainConfig c;
        edit(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    bad([](TrainConfig& c) { c.lr = -1.0; });
    bad([](TrainConfig& c) { c.sgd_momentum = 1.0; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.tau = 0.0; });
    bad([](TrainConfig& c) { c.queue_capacity = 0; });
    bad([](TrainConfig& c) { c.local_weight = -1.0; });
    EXPECT_NO_THROW(TrainConfig{}.validate());
    EXPECT_THROW(parse_training_mode("moco"), ConfigError);
    for (TrainingMode m : kModes) {
        EXPECT_EQ(parse_training_mode(mode_name(m)), m);
    }
}

TEST(TrainStep, ZeroLearningRateLeavesParametersAndGrowsQueues) {
    Fixture f;
    const std::size_t ids[] = {0, 5, 9, 17};
    for (TrainingMode mode : kModes) {
        TrainConfig cfg = tiny_train(mode);
        cfg.lr = 0.0;
        TrainState s = init_train_state(cfg);
        const ModelState before = s.model;
        train_step(s, f.data, f.manifest, ids);
        EXPECT_EQ(copy_of(query_parameters(std::as_const(s.model))),
                  copy_of(query_parameters(before)));
        // key == query at init, so the momentum update moves keys by rounding only
        const auto keys = key_parameters(std::as_const(s.model));
        const auto keys0 = key_parameters(before);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            for (std::size_t j = 0; j < keys[i]->size(); ++j) {
                ASSERT_NEAR((*keys[i])[j], (*keys0[i])[j], 1e-15);
            }
        }
        for (const Tensor& v : s.velocity) {
            EXPECT_TRUE(std::all_of(v.values().begin(), v.values().end(), [](double x) { return x == 0.0; }));
        }
        const std::size_t per_query_g = uses_global_pairs(mode) ? 3 : 1;
        const std::size_t per_query_l = uses_local_branch(mode) ? 2 : 0;
        EXPECT_EQ(s.global_queue.size(), 4 * per_query_g);
        EXPECT_EQ(s.local_queue.size(), 4 * per_query_l);
    }
}

TEST(TrainStep, FirstStepLossIsZeroWithEmptyQueues) {
    Fixture f;
    const std::size_t ids[] = {1, 2, 3};
    for (TrainingMode mode : kModes) {
        TrainState s = init_train_state(tiny_train(mode));
        const StepMetrics m = train_step(s, f.data, f.manifest, ids);
        EXPECT_EQ(m.step, 1u);
        EXPECT_EQ(m.loss_total, 0.0);
        EXPECT_EQ(m.loss_global, 0.0);
        EXPECT_EQ(m.loss_local, 0.0);
        const StepMetrics second = train_step(s, f.data, f.manifest, ids);
        EXPECT_GT(second.loss_global, 0.0);
        EXPECT_EQ(second.loss_local > 0.0, uses_local_branch(mode));
    }
}

TEST(TrainStep, KeySideMovesByExactEma) {
    Fixture f;
    const std::size_t ids[] = {4, 8, 12, 16};
    TrainState s = init_train_state(tiny_train(TrainingMode::aug_global_local));
    const double m = s.config.model.momentum_m;
    for (int step = 0; step < 10; ++step) {
        const auto keys_before = copy_of(key_parameters(std::as_const(s.model)));
        train_step(s, f.data, f.manifest, ids);
        const auto queries = query_parameters(std::as_const(s.model));
        const auto keys = key_parameters(std::as_const(s.model));
        ASSERT_EQ(keys.size(), keys_before.size());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            for (std::size_t j = 0; j < keys[i]->size(); ++j) {
                ASSERT_EQ((*keys[i])[j], m * keys_before[i][j] + (1.0 - m) * (*queries[i])[j]);
            }
        }
    }
}

TEST(TrainStep, SgdMomentumUpdateMatchesReplay) {
    Fixture f;
    const std::size_t ids[] = {0, 1, 2, 3};
    TrainConfig cfg = tiny_train(TrainingMode::aug_global);
    cfg.weight_decay = 1e-3;
    TrainState s = init_train_state(cfg);
    for (int step = 0; step < 4; ++step) {
        // Replay the step on a copy: same batch (same rng), gradients from the
        // pre-step model.
        TrainState probe = s;
        const TrainBatch batch = assemble_batch(probe, f.data, f.manifest, ids, probe.rng);
        const StepResult r = loss_gradients(s.model, cfg, batch);
        const auto theta = copy_of(query_parameters(std::as_const(s.model)));
        const auto velocity = s.velocity;
        train_step(s, f.data, f.manifest, ids);
        const auto after = query_parameters(std::as_const(s.model));
        for (std::size_t i = 0; i < after.size(); ++i) {
            for (std::size_t j = 0; j < after[i]->size(); ++j) {
                const double v = cfg.sgd_momentum * velocity[i][j] + r.grads[i][j] + cfg.weight_decay * theta[i][j];
                ASSERT_EQ(s.velocity[i][j], v);
                ASSERT_EQ((*after[i])[j], theta[i][j] - cfg.lr * v);
            }
        }
    }
}

TEST(LossGradients, KeyBlocksPerMode) {
    Fixture f;
    const std::size_t ids[] = {3, 7};
    for (TrainingMode mode : kModes) {
        TrainState s = init_train_state(tiny_train(mode));
        Rng rng(1);
        const TrainBatch b = assemble_batch(s, f.data, f.manifest, ids, rng);
        const StepResult r = loss_gradients(s.model, s.config, b);
        EXPECT_EQ(r.key_aug.rows(), 2u);
        EXPECT_EQ(r.key_global0.size() > 0, uses_global_pairs(mode));
        EXPECT_EQ(r.key_global1.size() > 0, uses_global_pairs(mode));
        EXPECT_EQ(r.key_local0.size() > 0, uses_local_branch(mode));
        EXPECT_EQ(r.key_local1.size() > 0, uses_local_branch(mode));
        EXPECT_EQ(r.grads.size(), query_parameters(s.model).size());
    }
}

TEST(LossGradients, LocalHeadGetsNoGradientWithoutLocalBranch) {
    Fixture f;
    const std::size_t ids[] = {3, 7, 11};
    TrainState s = init_train_state(tiny_train(TrainingMode::aug_global));
    run_training(s, f.data, f.manifest);
    Rng rng(2);
    const TrainBatch b = assemble_batch(s, f.data, f.manifest, ids, rng);
    const StepResult r = loss_gradients(s.model, s.config, b);
    const std::size_t n_enc = parameters(s.model.query_encoder).size();
    const std::size_t n_head = parameters(s.model.global_query).size();
    for (std::size_t i = n_enc + n_head; i < r.grads.size(); ++i) {
        EXPECT_EQ(norm(r.grads[i].values()), 0.0);
    }
    EXPECT_GT(norm(r.grads[0].values()), 0.0);
}

TEST(LossGradients, MatchFiniteDifferencesOfEvaluateLoss) {
    Fixture f;
    const std::size_t ids[] = {2, 6, 13};
    for (TrainingMode mode : kModes) {
        TrainState s = init_train_state(tiny_train(mode));
        run_training(s, f.data, f.manifest);  // fills the queues
        Rng rng(3);
        const TrainBatch b = assemble_batch(s, f.data, f.manifest, ids, rng);
        const StepResult r = loss_gradients(s.model, s.config, b);
        EXPECT_EQ(r.loss_total, evaluate_loss(s.model, s.config, b));
        ModelState model = s.model;
        const auto params = query_parameters(model);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor fd = finite_diff_grad(
                [&](const Tensor& t) {
                    const Tensor saved = *params[i];
                    *params[i] = t;
                    const double l = evaluate_loss(model, s.config, b);
                    *params[i] = saved;
                    return l;
                },
                *params[i]);
            EXPECT_LT(max_relative_error(r.grads[i], fd), 1e-5) << mode_name(mode) << " param " << i;
        }
    }
}

TEST(RunTraining, QueueLengthsFollowEnqueueCount) {
    Fixture f;
    for (TrainingMode mode : kModes) {
        TrainState s = init_train_state(tiny_train(mode));
        std::size_t pushed_g = 0, pushed_l = 0;
        std::size_t seen = 0;
        run_training(s, f.data, f.manifest, [&](const StepMetrics& m) {
            const std::size_t b = seen + 4 <= 30 ? 4 : 30 - seen;
            seen = (seen + b) % 30;
            pushed_g += b * (uses_global_pairs(mode) ? 3 : 1);
            pushed_l += b * (uses_local_branch(mode) ? 2 : 0);
            EXPECT_EQ(m.global_queue_size, std::min<std::size_t>(16, pushed_g));
            EXPECT_EQ(m.local_queue_size, std::min<std::size_t>(16, pushed_l));
            EXPECT_GE(m.loss_total, 0.0);
        });
        EXPECT_EQ(s.epoch, 2u);
        EXPECT_EQ(s.step, 16u);  // ceil(30 / 4) per epoch
    }
}

TEST(RunTraining, DeterministicUnderSeed) {
    Fixture f;
    auto run = [&](std::uint64_t seed) {
        TrainConfig cfg = tiny_train(TrainingMode::aug_global_local);
        cfg.seed = seed;
        TrainState s = init_train_state(cfg);
        std::vector<StepMetrics> log;
        run_training(s, f.data, f.manifest, [&](const StepMetrics& m) { log.push_back(m); });
        return std::make_pair(s, log);
    };
    const auto a = run(4), b = run(4), c = run(5);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    EXPECT_NE(a.second, c.second);
}

TEST(RunTraining, ResumingAfterAnEpochMatchesOneRun) {
    Fixture f;
    TrainConfig cfg = tiny_train(TrainingMode::aug_global_local);
    TrainState whole = init_train_state(cfg);
    run_training(whole, f.data, f.manifest);
    cfg.epochs = 1;
    TrainState part = init_train_state(cfg);
    run_training(part, f.data, f.manifest);
    part.config.epochs = 2;
    TrainState restored = checkpoint_from_json(checkpoint_to_json(part));
    run_training(restored, f.data, f.manifest);
    EXPECT_EQ(restored.model, whole.model);
    EXPECT_EQ(restored.global_queue, whole.global_queue);
}

TEST(RunTraining, KeyParametersOnlyMoveByEma) {
    // Replays the key side from query snapshots; any optimizer write to the
    // key side would break bitwise agreement.
    Fixture f;
    TrainState t = init_train_state(tiny_train(TrainingMode::aug_global_local));
    ModelState replay = t.model;
    const double m = t.config.model.momentum_m;
    run_training(t, f.data, f.manifest, [&](const StepMetrics&) {
        auto q = query_parameters(std::as_const(t.model));
        auto k = key_parameters(replay);
        for (std::size_t i = 0; i < k.size(); ++i) {
            for (std::size_t j = 0; j < k[i]->size(); ++j) {
                (*k[i])[j] = m * (*k[i])[j] + (1.0 - m) * (*q[i])[j];
            }
        }
    });
    EXPECT_EQ(checksum(key_parameters(std::as_const(t.model))),
              checksum(key_parameters(std::as_const(replay))));
    EXPECT_NE(checksum(key_parameters(std::as_const(t.model))),
              checksum(query_parameters(std::as_const(t.model))));
}

TEST(RunTraining, InputWidthMismatchIsConfigError) {
    Fixture f;
    TrainConfig cfg = tiny_train(TrainingMode::aug_only);
    cfg.model.input_dim = 9;
    TrainState s = init_train_state(cfg);
    EXPECT_THROW(run_training(s, f.data, f.manifest), ConfigError);
}

TEST(RunTraining, GlobalModesRequireAValidManifest) {
    Fixture f;
    TrainState s = init_train_state(tiny_train(TrainingMode::aug_global));
    EXPECT_THROW(run_training(s, f.data, PairManifest{}), IntegrityError);
    TrainState a = init_train_state(tiny_train(TrainingMode::aug_only));
    EXPECT_NO_THROW(run_training(a, f.data, PairManifest{}));
}

TEST(Train, WritesMetricsAndCheckpoint) {
    Fixture f;
    const fs::path dir = fs::temp_directory_path() / "flags_test_train";
    fs::remove_all(dir);
    TrainConfig cfg = tiny_train(TrainingMode::aug_global_local);
    cfg.checkpoint_every = 1;
    std::vector<StepMetrics> seen;
    const fs::path ckpt = train(cfg, f.data, f.manifest, dir, [&](const StepMetrics& m) { seen.push_back(m); });
    EXPECT_EQ(ckpt, dir / "checkpoint.json");
    EXPECT_TRUE(fs::exists(dir / "checkpoint-epoch1.json"));
    const std::string csv = slurp(dir / "metrics.csv");
    std::string expected = metrics_csv_header();
    for (const StepMetrics& m : seen) {
        expected += metrics_csv_row(m);
    }
    EXPECT_EQ(csv, expected);
    EXPECT_EQ(seen.size(), 16u);
    const TrainState loaded = load_checkpoint(ckpt);
    EXPECT_EQ(loaded.step, 16u);
    EXPECT_EQ(loaded.epoch, 2u);

    const fs::path again = fs::temp_directory_path() / "flags_test_train2";
    fs::remove_all(again);
    train(cfg, f.data, f.manifest, again);
    EXPECT_EQ(slurp(again / "metrics.csv"), csv);
    EXPECT_EQ(slurp(again / "checkpoint.json"), slurp(ckpt));
    fs::remove_all(dir);
    fs::remove_all(again);
}

TEST(Train, ZeroEpochsWritesInitialCheckpoint) {
    Fixture f;
    const fs::path dir = fs::temp_directory_path() / "flags_test_train0";
    fs::remove_all(dir);
    TrainConfig cfg = tiny_train(TrainingMode::aug_only);
    cfg.epochs = 0;
    const fs::path ckpt = train(cfg, f.data, f.manifest, dir);
    EXPECT_EQ(slurp(dir / "metrics.csv"), metrics_csv_header());
    const TrainState loaded = load_checkpoint(ckpt);
    EXPECT_EQ(loaded, init_train_state(cfg));
    fs::remove_all(dir);
}

TEST(MetricsCsv, RowFormatRoundTripsDoubles) {
    const StepMetrics m{7, 0.1, 1.0 / 3.0, 0.0, 12, 0};
    const std::string row = metrics_csv_row(m);
    EXPECT_EQ(row.substr(0, 2), "7,");
    unsigned long long step = 0;
    double a = 0, b = 0;
    ASSERT_EQ(std::sscanf(row.c_str(), "%llu,%lf,%lf", &step, &a, &b), 3);
    EXPECT_EQ(a, 0.1);
    EXPECT_EQ(b, 1.0 / 3.0);
}
