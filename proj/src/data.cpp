#include "flags/data.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "flags/error.hpp"

namespace flags {

void DataConfig::validate() const {
    if (num_classes == 0 || num_contexts == 0 || contexts_per_class == 0 || input_dim == 0) {
        throw ConfigError("data: counts and input_dim must be positive");
    }
    if (samples_per_class < 5) {
        throw ConfigError("data.samples_per_class must be at least 5 for pair mining, got " +
                          std::to_string(samples_per_class));
    }
    if (contexts_per_class > num_contexts) {
        throw ConfigError("data.contexts_per_class exceeds data.num_contexts");
    }
    if (input_dim < num_classes + num_contexts) {
        throw ConfigError("data.input_dim (" + std::to_string(input_dim) +
                          ") must be at least num_classes + num_contexts (" +
                          std::to_string(num_classes + num_contexts) + ")");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw ConfigError("data.noise_sigma must be finite and non-negative");
    }
}

Tensor SyntheticDataset::inputs(std::span<const std::size_t> ids) const {
    Tensor out({ids.size(), config.input_dim});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const auto& x = samples.at(ids[r]).x;
        std::copy(x.begin(), x.end(), out.row(r).begin());
    }
    return out;
}

Tensor SyntheticDataset::all_inputs() const {
    std::vector<std::size_t> ids(samples.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return inputs(ids);
}

namespace {

// Gram-Schmidt over Gaussian draws; rows come out orthonormal.
Tensor orthonormal_rows(std::size_t n, std::size_t d, Rng& rng) {
    Tensor out({n, d});
    for (std::size_t r = 0; r < n; ++r) {
        auto row = out.row(r);
        double nrm = 0.0;
        // A draw lying in the span of earlier rows has probability zero; retry
        // anyway rather than divide by a tiny norm.
        while (nrm < 1e-6) {
            for (double& v : row) {
                v = rng.normal();
            }
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t p = 0; p < r; ++p) {
                    const auto prev = out.row(p);
                    const double c = dot(row, prev);
                    for (std::size_t k = 0; k < d; ++k) {
                        row[k] -= c * prev[k];
                    }
                }
            }
            nrm = norm(row);
        }
        for (double& v : row) {
            v /= nrm;
        }
    }
    return out;
}

}  // namespace

SyntheticDataset gen_synthetic(const DataConfig& config, std::uint64_t seed) {
    config.validate();
    SyntheticDataset ds;
    ds.config = config;
    ds.seed = seed;
    Rng factor_rng(mix_seed(seed, 0x666163746f72ULL));
    Tensor factors = orthonormal_rows(config.num_classes + config.num_contexts, config.input_dim,
                                      factor_rng);
    const std::size_t d = config.input_dim;
    ds.class_factors = Tensor({config.num_classes, d},
                              std::vector<double>(factors.data().begin(),
                                                  factors.data().begin() + config.num_classes * d));
    ds.context_factors = Tensor({config.num_contexts, d},
                                std::vector<double>(factors.data().begin() + config.num_classes * d,
                                                    factors.data().end()));

    ds.samples.reserve(config.num_classes * config.samples_per_class);
    for (std::size_t c = 0; c < config.num_classes; ++c) {
        for (std::size_t k = 0; k < config.samples_per_class; ++k) {
            Sample s;
            s.id = ds.samples.size();
            s.class_id = c;
            s.context_id = (c + k % config.contexts_per_class) % config.num_contexts;
            // One stream per sample id, so any sample can be regenerated alone.
            Rng noise(mix_seed(seed, 0x100000000ULL + s.id));
            const auto fg = ds.class_factors.row(c);
            const auto bg = ds.context_factors.row(s.context_id);
            s.x.resize(d);
            for (std::size_t j = 0; j < d; ++j) {
                s.x[j] = fg[j] + bg[j] + config.noise_sigma * noise.normal();
            }
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

void validate_dataset(const SyntheticDataset& data) {
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
        const Sample& s = data.samples[i];
        if (s.id != i) {
            throw IntegrityError("dataset: sample at position " + std::to_string(i) + " has id " +
                                 std::to_string(s.id));
        }
        if (s.class_id >= data.config.num_classes || s.context_id >= data.config.num_contexts) {
            throw IntegrityError("dataset: sample " + std::to_string(i) + " has out-of-range labels");
        }
        if (s.x.size() != data.config.input_dim) {
            throw IntegrityError("dataset: sample " + std::to_string(i) + " has width " +
                                 std::to_string(s.x.size()));
        }
        for (double v : s.x) {
            if (!std::isfinite(v)) {
                throw IntegrityError("dataset: sample " + std::to_string(i) + " is not finite");
            }
        }
    }
}

void AugmentationConfig::validate() const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        throw ConfigError("augment.noise_sigma must be finite and non-negative");
    }
    if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) {
        throw ConfigError("augment.mask_fraction must lie in [0, 1)");
    }
}

std::vector<double> augment(std::span<const double> x, const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<double> out(x.begin(), x.end());
    if (cfg.noise_sigma > 0.0) {
        for (double& v : out) {
            v += cfg.noise_sigma * rng.normal();
        }
    }
    const std::size_t d = out.size();
    const auto masked = static_cast<std::size_t>(std::llround(cfg.mask_fraction * static_cast<double>(d)));
    if (masked > 0) {
        std::vector<std::size_t> idx(d);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < masked; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(d - i));
            std::swap(idx[i], idx[j]);
            out[idx[i]] = 0.0;
        }
    }
    return out;
}

Tensor augment_rows(const Tensor& xs, const AugmentationConfig& cfg, Rng& rng) {
    Tensor out = xs;
    for (std::size_t r = 0; r < xs.rows(); ++r) {
        const auto a = augment(xs.row(r), cfg, rng);
        std::copy(a.begin(), a.end(), out.row(r).begin());
    }
    return out;
}

}  // namespace flags
