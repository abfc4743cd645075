#include "flags/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "flags/error.hpp"
#include "flags/graph.hpp"
#include "flags/rng.hpp"

namespace flags {

void ProbeConfig::validate() const {
    if (!(lr > 0.0)) {
        throw ConfigError("eval.probe_lr must be positive");
    }
    if (batch_size == 0) {
        throw ConfigError("eval.probe_batch_size must be at least 1");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("eval.train_fraction must lie in (0, 1)");
    }
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

Tensor logits_of(const Tensor& x, const Tensor& w, const Tensor& b) {
    Graph g;
    return add_bias(matmul(g.constant(x), g.constant(w)), g.constant(b)).value();
}

Tensor rows_of(const Tensor& m, std::span<const std::size_t> idx) {
    Tensor out({idx.size(), m.cols()});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(m.row(idx[r]).begin(), m.cols(), out.row(r).begin());
    }
    return out;
}

}  // namespace

ProbeResult linear_probe(const Tensor& features, std::span<const std::size_t> labels,
                         std::size_t num_classes, const ProbeConfig& config) {
    config.validate();
    const std::size_t n = labels.size();
    if (features.rows() != n) {
        throw DimensionError("linear_probe: " + std::to_string(features.rows()) +
                             " feature rows for " + std::to_string(n) + " labels");
    }
    for (std::size_t y : labels) {
        if (y >= num_classes) {
            throw IntegrityError("linear_probe: label " + std::to_string(y) + " out of range");
        }
    }
    const std::size_t dim = features.cols();

    ProbeResult res;
    Rng rng(mix_seed(config.seed, 0x70726f6265ULL));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
    res.train_ids.assign(order.begin(), order.begin() + n_train);
    res.eval_ids.assign(order.begin() + n_train, order.end());
    std::sort(res.train_ids.begin(), res.train_ids.end());
    std::sort(res.eval_ids.begin(), res.eval_ids.end());
    if (res.train_ids.empty() || res.eval_ids.empty()) {
        throw SplitError("linear_probe: split leaves an empty side");
    }
    std::vector<bool> in_train(num_classes, false);
    for (std::size_t i : res.train_ids) {
        in_train[labels[i]] = true;
    }
    for (std::size_t i : res.eval_ids) {
        if (!in_train[labels[i]]) {
            throw SplitError("linear_probe: class " + std::to_string(labels[i]) +
                             " appears in the eval split but not in the train split");
        }
    }

    // Standardization statistics from the train split only.
    std::vector<double> mean(dim, 0.0), inv_std(dim, 1.0);
    if (config.standardize) {
        for (std::size_t i : res.train_ids) {
            for (std::size_t c = 0; c < dim; ++c) {
                mean[c] += features.at(i, c);
            }
        }
        for (double& m : mean) {
            m /= static_cast<double>(res.train_ids.size());
        }
        for (std::size_t c = 0; c < dim; ++c) {
            double var = 0.0;
            for (std::size_t i : res.train_ids) {
                const double d = features.at(i, c) - mean[c];
                var += d * d;
            }
            var /= static_cast<double>(res.train_ids.size());
            inv_std[c] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
        }
    }
    Tensor x = features;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
            x.at(r, c) = (x.at(r, c) - mean[c]) * inv_std[c];
        }
    }

    res.weight = Tensor({dim, num_classes});
    res.bias = Tensor({num_classes});
    std::vector<std::size_t> batch_order = res.train_ids;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = batch_order.size(); i > 1; --i) {
            std::swap(batch_order[i - 1], batch_order[rng.below(i)]);
        }
        for (std::size_t start = 0; start < batch_order.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, batch_order.size() - start);
            const auto ids = std::span<const std::size_t>(batch_order).subspan(start, len);
            Tensor onehot({len, num_classes});
            for (std::size_t r = 0; r < len; ++r) {
                onehot.at(r, labels[ids[r]]) = 1.0;
            }
            Graph g;
            Var w = g.leaf(res.weight);
            Var b = g.leaf(res.bias);
            Var logits = add_bias(matmul(g.constant(rows_of(x, ids)), w), b);
            // mean cross-entropy: logsumexp(logits) - logit[label]
            Var ce = sub(logsumexp_rows(logits), row_dot(logits, g.constant(onehot)));
            Var loss = scale(sum(ce), 1.0 / static_cast<double>(len));
            g.backward(loss);
            for (std::size_t k = 0; k < res.weight.size(); ++k) {
                res.weight[k] -= config.lr * w.grad()[k];
            }
            for (std::size_t k = 0; k < res.bias.size(); ++k) {
                res.bias[k] -= config.lr * b.grad()[k];
            }
        }
    }

    const Tensor logits = logits_of(x, res.weight, res.bias);
    std::size_t train_hits = 0;
    for (std::size_t i : res.train_ids) {
        train_hits += argmax_row(logits.row(i)) == labels[i] ? 1 : 0;
    }
    res.train_accuracy = static_cast<double>(train_hits) / static_cast<double>(res.train_ids.size());
    res.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    std::size_t hits = 0;
    for (std::size_t i : res.eval_ids) {
        const std::size_t pred = argmax_row(logits.row(i));
        ++res.confusion[labels[i]][pred];
        hits += pred == labels[i] ? 1 : 0;
    }
    res.top1_accuracy = static_cast<double>(hits) / static_cast<double>(res.eval_ids.size());
    for (std::size_t c = 0; c < num_classes; ++c) {
        const auto& row = res.confusion[c];
        const std::size_t total = std::accumulate(row.begin(), row.end(), std::size_t{0});
        res.per_class_accuracy.push_back(total == 0 ? std::numeric_limits<double>::quiet_NaN()
                                                    : static_cast<double>(row[c]) /
                                                          static_cast<double>(total));
    }
    return res;
}

ProbeResult linear_probe(const EncoderParams& encoder, const SyntheticDataset& data,
                         const ProbeConfig& config) {
    if (encoder.input_dim() != data.input_dim()) {
        throw ConfigError("linear_probe: encoder expects input_dim " +
                          std::to_string(encoder.input_dim()) + ", dataset has " +
                          std::to_string(data.input_dim()));
    }
    std::vector<std::size_t> labels;
    for (const Sample& s : data.samples) {
        labels.push_back(s.class_id);
    }
    return linear_probe(encode(encoder, data.all_inputs()), labels, data.num_classes(), config);
}

SubspaceStats pair_statistics(const Tensor& e, std::span<const std::size_t> class_ids,
                              std::span<const std::size_t> context_ids) {
    const std::size_t n = e.rows();
    SubspaceStats s;
    double within = 0.0, between = 0.0, same_ctx = 0.0, diff_ctx = 0.0, kernel = 0.0;
    std::size_t n_within = 0, n_between = 0, n_same = 0, n_diff = 0, n_pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = e.row(i);
        const double na = norm(a);
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto b = e.row(j);
            const double ab = dot(a, b);
            const double nb = norm(b);
            const double cos = na > 0.0 && nb > 0.0 ? ab / (na * nb) : 0.0;
            double sq = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double d = a[k] - b[k];
                sq += d * d;
            }
            kernel += std::exp(-2.0 * sq);
            ++n_pairs;
            if (class_ids[i] == class_ids[j]) {
                within += cos;
                ++n_within;
                if (context_ids[i] == context_ids[j]) {
                    same_ctx += cos;
                    ++n_same;
                } else {
                    diff_ctx += cos;
                    ++n_diff;
                }
            } else {
                between += cos;
                ++n_between;
            }
        }
    }
    auto mean = [](double total, std::size_t count) {
        return count == 0 ? 0.0 : total / static_cast<double>(count);
    };
    s.within_class_cos = mean(within, n_within);
    s.between_class_cos = mean(between, n_between);
    s.same_context_cos = mean(same_ctx, n_same);
    s.diff_context_cos = mean(diff_ctx, n_diff);
    s.uniformity = n_pairs == 0 ? 0.0 : std::log(kernel / static_cast<double>(n_pairs));
    return s;
}

double alignment(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("alignment: shape " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    if (a.rows() == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
            const double d = a.at(r, c) - b.at(r, c);
            total += d * d;
        }
    }
    return total / static_cast<double>(a.rows());
}

EmbeddingReport embedding_report(const ModelState& model, const SyntheticDataset& data,
                                 const ReportConfig& config) {
    std::vector<std::size_t> classes, contexts;
    for (const Sample& s : data.samples) {
        classes.push_back(s.class_id);
        contexts.push_back(s.context_id);
    }
    const Tensor inputs = data.all_inputs();
    const Tensor features = encode(model.query_encoder, inputs);
    Rng rng(mix_seed(config.seed, 0x7265706f7274ULL));
    const Tensor view_a = encode(model.query_encoder, augment_rows(inputs, config.augment, rng));
    const Tensor view_b = encode(model.query_encoder, augment_rows(inputs, config.augment, rng));

    EmbeddingReport r;
    auto fill = [&](const ProjectionHead& head, SubspaceStats& out) {
        out = pair_statistics(project(head, features), classes, contexts);
        out.alignment = alignment(project(head, view_a), project(head, view_b));
    };
    fill(model.global_query, r.global);
    fill(model.local_query, r.local);
    return r;
}

}  // namespace flags
