#include "flags/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "flags/error.hpp"
#include "flags/io.hpp"

namespace flags {

TrainingMode parse_training_mode(std::string_view name) {
    if (name == "aug_only") {
        return TrainingMode::aug_only;
    }
    if (name == "aug_global") {
        return TrainingMode::aug_global;
    }
    if (name == "aug_global_local") {
        return TrainingMode::aug_global_local;
    }
    throw ConfigError("unknown training mode '" + std::string(name) +
                      "' (expected aug_only, aug_global or aug_global_local)");
}

std::string_view mode_name(TrainingMode mode) {
    switch (mode) {
        case TrainingMode::aug_only:
            return "aug_only";
        case TrainingMode::aug_global:
            return "aug_global";
        case TrainingMode::aug_global_local:
            return "aug_global_local";
    }
    return "unknown";
}

void TrainConfig::validate() const {
    model.validate();
    augment.validate();
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw ConfigError("train.lr must be finite and non-negative");
    }
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) {
        throw ConfigError("train.sgd_momentum must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError("train.weight_decay must be non-negative");
    }
    if (batch_size == 0) {
        throw ConfigError("train.batch_size must be at least 1");
    }
    if (!(tau > 0.0)) {
        throw ConfigError("train.tau must be positive");
    }
    if (queue_capacity == 0) {
        throw ConfigError("train.queue_capacity must be positive");
    }
    if (!(local_weight >= 0.0) || !std::isfinite(local_weight)) {
        throw ConfigError("train.local_weight must be finite and non-negative");
    }
}

TrainState init_train_state(const TrainConfig& config) {
    config.validate();
    TrainState s{
        config,
        init_model(config.model, config.seed),
        {},
        KeyQueue(config.queue_capacity, config.model.embed_dim, Branch::global),
        KeyQueue(config.queue_capacity, config.model.embed_dim, Branch::local),
        0,
        0,
        Rng(mix_seed(config.seed, 0x747261696eULL)),
    };
    for (const Tensor* p : query_parameters(std::as_const(s.model))) {
        s.velocity.emplace_back(p->shape());
    }
    return s;
}

TrainBatch assemble_batch(const TrainState& state, const SyntheticDataset& data,
                          const PairManifest& manifest, std::span<const std::size_t> query_ids,
                          Rng& rng) {
    const TrainingMode mode = state.config.mode;
    const AugmentationConfig& aug = state.config.augment;
    std::vector<std::size_t> g0, g1, l0, l1;
    for (std::size_t id : query_ids) {
        if (id >= data.samples.size()) {
            throw IntegrityError("train: query id " + std::to_string(id) + " not in dataset");
        }
        if (uses_global_pairs(mode)) {
            const ManifestEntry& e = manifest.at(id);
            g0.push_back(e.global[0]);
            g1.push_back(e.global[1]);
            l0.push_back(e.local[0]);
            l1.push_back(e.local[1]);
        }
    }
    TrainBatch b;
    b.query = augment_rows(data.inputs(query_ids), aug, rng);
    b.aug = augment_rows(data.inputs(query_ids), aug, rng);
    if (uses_global_pairs(mode)) {
        b.global0 = augment_rows(data.inputs(g0), aug, rng);
        b.global1 = augment_rows(data.inputs(g1), aug, rng);
    }
    if (uses_local_branch(mode)) {
        b.local0 = augment_rows(data.inputs(l0), aug, rng);
        b.local1 = augment_rows(data.inputs(l1), aug, rng);
    }
    b.global_negatives = state.global_queue.negatives_matrix();
    b.local_negatives = state.local_queue.negatives_matrix();
    return b;
}

namespace {

struct Forward {
    Var total;
    Var global;
    std::optional<Var> local;
    // Binding positions of the three query-side parameter groups.
    ParamBinding encoder, global_head, local_head;
    Tensor key_aug, key_global0, key_global1, key_local0, key_local1;
};

Tensor key_embed(const ModelState& m, const ProjectionHead& head, const Tensor& x) {
    return project(head, encode(m.key_encoder, x));
}

Forward forward(Graph& g, const ModelState& m, const TrainConfig& cfg, const TrainBatch& b,
                bool bind) {
    Forward f;
    const TrainingMode mode = cfg.mode;
    Var feature = encode(g, m.query_encoder, g.constant(b.query), bind ? &f.encoder : nullptr);
    Var z_global = project(g, m.global_query, feature, bind ? &f.global_head : nullptr);

    // Key side: plain values, entered as constants.
    f.key_aug = key_embed(m, m.global_key, b.aug);
    BranchVars global{z_global, {}, g.constant(b.global_negatives), cfg.tau};
    if (uses_global_pairs(mode)) {
        f.key_global0 = key_embed(m, m.global_key, b.global0);
        f.key_global1 = key_embed(m, m.global_key, b.global1);
        global.positives = {g.constant(f.key_global0), g.constant(f.key_global1)};
    }
    global.positives.push_back(g.constant(f.key_aug));
    f.global = branch_loss(g, global, cfg.reduction);
    f.total = f.global;

    if (uses_local_branch(mode)) {
        Var z_local = project(g, m.local_query, feature, bind ? &f.local_head : nullptr);
        f.key_local0 = key_embed(m, m.local_key, b.local0);
        f.key_local1 = key_embed(m, m.local_key, b.local1);
        BranchVars local{z_local,
                         {g.constant(f.key_local0), g.constant(f.key_local1)},
                         g.constant(b.local_negatives),
                         cfg.tau};
        f.local = branch_loss(g, local, cfg.reduction);
        f.total = add(f.total, cfg.local_weight == 1.0 ? *f.local : scale(*f.local, cfg.local_weight));
    }
    return f;
}

}  // namespace

StepResult loss_gradients(const ModelState& model, const TrainConfig& config,
                          const TrainBatch& batch) {
    Graph g;
    Forward f = forward(g, model, config, batch, true);
    g.backward(f.total);

    StepResult r;
    r.loss_total = f.total.value().item();
    r.loss_global = f.global.value().item();
    r.loss_local = f.local ? f.local->value().item() : 0.0;
    // Unused groups (local head outside aug_global_local) get zero gradient.
    auto collect = [&r](const ParamBinding& binding, const std::vector<const Tensor*>& params) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            r.grads.push_back(binding.vars.empty() ? Tensor(params[i]->shape())
                                                   : binding.vars[i].grad());
        }
    };
    collect(f.encoder, parameters(model.query_encoder));
    collect(f.global_head, parameters(model.global_query));
    collect(f.local_head, parameters(model.local_query));
    r.key_aug = std::move(f.key_aug);
    r.key_global0 = std::move(f.key_global0);
    r.key_global1 = std::move(f.key_global1);
    r.key_local0 = std::move(f.key_local0);
    r.key_local1 = std::move(f.key_local1);
    return r;
}

double evaluate_loss(const ModelState& model, const TrainConfig& config, const TrainBatch& batch) {
    Graph g;
    return forward(g, model, config, batch, false).total.value().item();
}

StepMetrics train_step(TrainState& state, const SyntheticDataset& data,
                       const PairManifest& manifest, std::span<const std::size_t> query_ids) {
    const TrainConfig& cfg = state.config;
    const TrainBatch batch = assemble_batch(state, data, manifest, query_ids, state.rng);
    StepResult r = loss_gradients(state.model, cfg, batch);

    if (cfg.lr > 0.0) {
        auto params = query_parameters(state.model);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto theta = params[i]->values();
            auto v = state.velocity[i].values();
            const auto g = r.grads[i].values();
            for (std::size_t j = 0; j < theta.size(); ++j) {
                v[j] = cfg.sgd_momentum * v[j] + g[j] + cfg.weight_decay * theta[j];
                theta[j] -= cfg.lr * v[j];
            }
        }
    }
    momentum_update(state.model);

    if (uses_global_pairs(cfg.mode)) {
        state.global_queue.enqueue_batch(r.key_global0);
        state.global_queue.enqueue_batch(r.key_global1);
    }
    state.global_queue.enqueue_batch(r.key_aug);
    if (uses_local_branch(cfg.mode)) {
        state.local_queue.enqueue_batch(r.key_local0);
        state.local_queue.enqueue_batch(r.key_local1);
    }
    ++state.step;
    return StepMetrics{state.step,
                       r.loss_total,
                       r.loss_global,
                       r.loss_local,
                       state.global_queue.size(),
                       state.local_queue.size()};
}

void run_training(TrainState& state, const SyntheticDataset& data, const PairManifest& manifest,
                  const StepObserver& on_step, const EpochObserver& on_epoch) {
    state.config.validate();
    if (state.config.model.input_dim != data.input_dim()) {
        throw ConfigError("train: model input_dim " + std::to_string(state.config.model.input_dim) +
                          " does not match dataset input_dim " + std::to_string(data.input_dim()));
    }
    if (uses_global_pairs(state.config.mode)) {
        validate_manifest(manifest, data);
    }
    const std::size_t n = data.samples.size();
    const std::size_t bs = state.config.batch_size;
    std::vector<std::size_t> order(n);
    while (state.epoch < state.config.epochs) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[state.rng.below(i)]);
        }
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t len = std::min(bs, n - start);
            const StepMetrics m =
                train_step(state, data, manifest, std::span<const std::size_t>(order).subspan(start, len));
            if (on_step) {
                on_step(m);
            }
        }
        ++state.epoch;
        if (on_epoch) {
            on_epoch(state);
        }
    }
}

std::string metrics_csv_header() {
    return "step,loss_total,loss_global,loss_local,q_g_len,q_l_len\n";
}

std::string metrics_csv_row(const StepMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%zu,%zu\n",
                  static_cast<unsigned long long>(m.step), m.loss_total, m.loss_global,
                  m.loss_local, m.global_queue_size, m.local_queue_size);
    return buf;
}

std::filesystem::path train(const TrainConfig& config, const SyntheticDataset& data,
                            const PairManifest& manifest, const std::filesystem::path& out_dir,
                            const StepObserver& on_step) {
    std::filesystem::create_directories(out_dir);
    TrainState state = init_train_state(config);
    const auto metrics_path = out_dir / "metrics.csv";
    const auto metrics_tmp = out_dir / "metrics.csv.partial";
    std::ofstream metrics(metrics_tmp, std::ios::binary | std::ios::trunc);
    if (!metrics) {
        throw ConfigError("train: cannot write " + metrics_tmp.string());
    }
    metrics << metrics_csv_header();
    run_training(
        state, data, manifest,
        [&metrics, &on_step](const StepMetrics& m) {
            metrics << metrics_csv_row(m);
            if (on_step) {
                on_step(m);
            }
        },
        [&out_dir, &config](const TrainState& s) {
            if (config.checkpoint_every > 0 && s.epoch % config.checkpoint_every == 0 &&
                s.epoch < config.epochs) {
                save_checkpoint(s, out_dir / ("checkpoint-epoch" + std::to_string(s.epoch) + ".json"));
            }
        });
    metrics.close();
    std::filesystem::rename(metrics_tmp, metrics_path);
    const auto ckpt = out_dir / "checkpoint.json";
    save_checkpoint(state, ckpt);
    return ckpt;
}

}  // namespace flags
