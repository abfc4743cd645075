#include "flags/model.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "flags/error.hpp"
#include "flags/rng.hpp"

namespace flags {

void ModelConfig::validate() const {
    const std::pair<const char*, std::size_t> dims[] = {
        {"input_dim", input_dim},       {"hidden_dim", hidden_dim},
        {"feature_dim", feature_dim},   {"head_hidden_dim", head_hidden_dim},
        {"embed_dim", embed_dim},
    };
    for (const auto& [name, value] : dims) {
        if (value == 0) {
            throw ConfigError(std::string("model.") + name + " must be positive");
        }
    }
    if (!(momentum_m >= 0.0 && momentum_m <= 1.0)) {
        throw ConfigError("model.momentum_m must lie in [0, 1], got " + std::to_string(momentum_m));
    }
}

namespace {

Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l{Tensor({in, out}), Tensor({out})};
    for (double& w : l.weight.values()) {
        w = rng.uniform(-bound, bound);
    }
    for (double& b : l.bias.values()) {
        b = rng.uniform(-bound, bound);
    }
    return l;
}

Var bind(Graph& g, const Tensor& t, ParamBinding* binding) {
    if (binding == nullptr) {
        return g.constant(t);
    }
    Var v = g.leaf(t, true);
    binding->vars.push_back(v);
    return v;
}

Var linear(Graph& g, const Linear& layer, Var x, ParamBinding* binding) {
    Var w = bind(g, layer.weight, binding);
    Var b = bind(g, layer.bias, binding);
    return add_bias(matmul(x, w), b);
}

Tensor as_batch(const Tensor& x) {
    if (x.rank() == 1) {
        return Tensor::matrix(1, x.size(), x.data());
    }
    return x;
}

Tensor like_input(Tensor y, const Tensor& x) {
    if (x.rank() == 1) {
        return Tensor::vector(y.data());
    }
    return y;
}

void check_linear_chain(const std::vector<const Linear*>& layers, const std::string& what) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Linear& l = *layers[i];
        if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.out_dim()) {
            throw IntegrityError(what + ": layer " + std::to_string(i) + " has inconsistent shapes");
        }
        if (i > 0 && layers[i - 1]->out_dim() != l.in_dim()) {
            throw IntegrityError(what + ": layer " + std::to_string(i) + " does not chain");
        }
        if (!l.weight.all_finite() || !l.bias.all_finite()) {
            throw IntegrityError(what + ": layer " + std::to_string(i) + " has non-finite values");
        }
    }
}

void check_same_shapes(const std::vector<const Tensor*>& a, const std::vector<const Tensor*>& b,
                       const std::string& what) {
    if (a.size() != b.size()) {
        throw IntegrityError(what + ": parameter count differs");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]->shape() != b[i]->shape()) {
            throw IntegrityError(what + ": parameter " + std::to_string(i) + " shape " +
                                 shape_string(a[i]->shape()) + " vs " +
                                 shape_string(b[i]->shape()));
        }
    }
}

}  // namespace

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    ModelState s;
    s.config = config;
    std::size_t in = config.input_dim;
    for (std::size_t i = 0; i < config.hidden_layers; ++i) {
        s.query_encoder.layers.push_back(make_linear(in, config.hidden_dim, rng));
        in = config.hidden_dim;
    }
    s.query_encoder.layers.push_back(make_linear(in, config.feature_dim, rng));
    s.global_query = {make_linear(config.feature_dim, config.head_hidden_dim, rng),
                      make_linear(config.head_hidden_dim, config.embed_dim, rng)};
    s.local_query = {make_linear(config.feature_dim, config.head_hidden_dim, rng),
                     make_linear(config.head_hidden_dim, config.embed_dim, rng)};
    s.key_encoder = s.query_encoder;
    s.global_key = s.global_query;
    s.local_key = s.local_query;
    return s;
}

void validate_model(const ModelState& state) {
    for (const auto* enc : {&state.query_encoder, &state.key_encoder}) {
        std::vector<const Linear*> layers;
        for (const Linear& l : enc->layers) {
            layers.push_back(&l);
        }
        if (layers.empty()) {
            throw IntegrityError("model: encoder has no layers");
        }
        check_linear_chain(layers, "encoder");
    }
    for (const auto* head :
         {&state.global_query, &state.local_query, &state.global_key, &state.local_key}) {
        check_linear_chain({&head->hidden, &head->output}, "projection head");
        if (head->hidden.in_dim() != state.query_encoder.output_dim()) {
            throw IntegrityError("model: head input does not match encoder feature dim");
        }
    }
    check_same_shapes(parameters(state.query_encoder), parameters(state.key_encoder), "encoders");
    check_same_shapes(parameters(state.global_query), parameters(state.global_key), "global heads");
    check_same_shapes(parameters(state.local_query), parameters(state.local_key), "local heads");
}

Var encode(Graph& g, const EncoderParams& params, Var x, ParamBinding* binding) {
    if (x.value().cols() != params.input_dim()) {
        throw DimensionError("encode: input has " + std::to_string(x.value().cols()) +
                             " features, encoder expects " + std::to_string(params.input_dim()));
    }
    Var h = x;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        h = linear(g, params.layers[i], h, binding);
        if (i + 1 < params.layers.size()) {
            h = relu(h);
        }
    }
    return h;
}

Var project(Graph& g, const ProjectionHead& head, Var feature, ParamBinding* binding) {
    if (feature.value().cols() != head.hidden.in_dim()) {
        throw DimensionError("project: feature has " + std::to_string(feature.value().cols()) +
                             " dims, head expects " + std::to_string(head.hidden.in_dim()));
    }
    Var h = relu(linear(g, head.hidden, feature, binding));
    return l2_normalize(linear(g, head.output, h, binding));
}

Tensor encode(const EncoderParams& params, const Tensor& x) {
    Graph g;
    return like_input(encode(g, params, g.constant(as_batch(x))).value(), x);
}

Tensor project(const ProjectionHead& head, const Tensor& feature) {
    Graph g;
    return like_input(project(g, head, g.constant(as_batch(feature))).value(), feature);
}

std::vector<Tensor*> parameters(EncoderParams& params) {
    std::vector<Tensor*> out;
    for (Linear& l : params.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<Tensor*> parameters(ProjectionHead& head) {
    return {&head.hidden.weight, &head.hidden.bias, &head.output.weight, &head.output.bias};
}

std::vector<const Tensor*> parameters(const EncoderParams& params) {
    std::vector<const Tensor*> out;
    for (const Linear& l : params.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<const Tensor*> parameters(const ProjectionHead& head) {
    return {&head.hidden.weight, &head.hidden.bias, &head.output.weight, &head.output.bias};
}

namespace {

template <typename State, typename Ptr>
std::vector<Ptr> side_parameters(State& s, bool query) {
    auto& enc = query ? s.query_encoder : s.key_encoder;
    auto& g = query ? s.global_query : s.global_key;
    auto& l = query ? s.local_query : s.local_key;
    std::vector<Ptr> out = parameters(enc);
    for (Ptr p : parameters(g)) {
        out.push_back(p);
    }
    for (Ptr p : parameters(l)) {
        out.push_back(p);
    }
    return out;
}

}  // namespace

std::vector<Tensor*> query_parameters(ModelState& state) {
    return side_parameters<ModelState, Tensor*>(state, true);
}
std::vector<Tensor*> key_parameters(ModelState& state) {
    return side_parameters<ModelState, Tensor*>(state, false);
}
std::vector<const Tensor*> query_parameters(const ModelState& state) {
    return side_parameters<const ModelState, const Tensor*>(state, true);
}
std::vector<const Tensor*> key_parameters(const ModelState& state) {
    return side_parameters<const ModelState, const Tensor*>(state, false);
}

void momentum_update(ModelState& state) {
    const double m = state.config.momentum_m;
    if (!(m >= 0.0 && m <= 1.0)) {
        throw ConfigError("momentum_update: m must lie in [0, 1], got " + std::to_string(m));
    }
    auto queries = query_parameters(std::as_const(state));
    auto keys = key_parameters(state);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        auto k = keys[i]->values();
        auto q = queries[i]->values();
        for (std::size_t j = 0; j < k.size(); ++j) {
            k[j] = m * k[j] + (1.0 - m) * q[j];
        }
    }
}

std::uint64_t checksum(const std::vector<const Tensor*>& tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    };
    for (const Tensor* t : tensors) {
        mix(t->size());
        for (double v : t->values()) {
            mix(std::bit_cast<std::uint64_t>(v));
        }
    }
    return h;
}

}  // namespace flags
