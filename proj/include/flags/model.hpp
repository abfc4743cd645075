#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flags/graph.hpp"
#include "flags/tensor.hpp"

namespace flags {

struct ModelConfig {
    std::size_t input_dim = 128;
    std::size_t hidden_dim = 64;
    std::size_t hidden_layers = 2;
    std::size_t feature_dim = 32;
    std::size_t head_hidden_dim = 32;
    std::size_t embed_dim = 16;
    // EMA coefficient of the key side: theta_k <- m theta_k + (1 - m) theta_q.
    double momentum_m = 0.999;

    // Throws ConfigError on non-positive dims or m outside [0, 1].
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Affine layer y = x W + b with W stored [in x out].
struct Linear {
    Tensor weight;
    Tensor bias;

    std::size_t in_dim() const { return weight.shape()[0]; }
    std::size_t out_dim() const { return weight.shape()[1]; }
    bool operator==(const Linear&) const = default;
};

// input -> hidden (relu) x hidden_layers -> feature (no activation).
struct EncoderParams {
    std::vector<Linear> layers;

    std::size_t input_dim() const { return layers.front().in_dim(); }
    std::size_t output_dim() const { return layers.back().out_dim(); }
    bool operator==(const EncoderParams&) const = default;
};

// feature -> head_hidden (relu) -> embed, then l2-normalized.
struct ProjectionHead {
    Linear hidden;
    Linear output;

    bool operator==(const ProjectionHead&) const = default;
};

struct ModelState {
    ModelConfig config;
    EncoderParams query_encoder;
    EncoderParams key_encoder;
    ProjectionHead global_query;
    ProjectionHead local_query;
    ProjectionHead global_key;
    ProjectionHead local_key;

    bool operator==(const ModelState&) const = default;
};

// Deterministic in `seed`. Key encoder and key heads start as exact copies of
// their query counterparts.
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

// Throws IntegrityError when query/key shapes disagree, layers do not chain,
// or a parameter is non-finite.
void validate_model(const ModelState& state);

// Leaves registered for one forward pass; grads are read back in the same
// order as the parameter lists below.
struct ParamBinding {
    std::vector<Var> vars;
};

// Graph forwards. x is [batch x input_dim]. With a binding, every parameter
// becomes a gradient-carrying leaf appended to it; without one, parameters
// enter as constants.
Var encode(Graph& g, const EncoderParams& params, Var x, ParamBinding* binding = nullptr);
Var project(Graph& g, const ProjectionHead& head, Var feature, ParamBinding* binding = nullptr);

// Value forwards without gradient recording. Accept [d] or [batch x d].
Tensor encode(const EncoderParams& params, const Tensor& x);
Tensor project(const ProjectionHead& head, const Tensor& feature);

std::vector<Tensor*> parameters(EncoderParams& params);
std::vector<Tensor*> parameters(ProjectionHead& head);
std::vector<const Tensor*> parameters(const EncoderParams& params);
std::vector<const Tensor*> parameters(const ProjectionHead& head);

// Query side: encoder, global head, local head. The key side lists the
// matching tensors in the same order.
std::vector<Tensor*> query_parameters(ModelState& state);
std::vector<Tensor*> key_parameters(ModelState& state);
std::vector<const Tensor*> query_parameters(const ModelState& state);
std::vector<const Tensor*> key_parameters(const ModelState& state);

// theta_k <- m theta_k + (1 - m) theta_q for every key tensor; the query side
// is untouched. Throws ConfigError when m is outside [0, 1].
void momentum_update(ModelState& state);

// Order-sensitive FNV-1a hash over the bit patterns of the given tensors.
std::uint64_t checksum(const std::vector<const Tensor*>& tensors);

}  // namespace flags
