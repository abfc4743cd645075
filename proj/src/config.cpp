#include "flags/config.hpp"

#include <set>
#include <sstream>
#include <type_traits>

#include "flags/error.hpp"

namespace flags {

using nlohmann::json;

std::string_view to_string(Reduction r) { return r == Reduction::sum ? "sum" : "mean"; }

std::string_view to_string(LocalPairPolicy) { return "median"; }

namespace {

std::string_view enum_name(TrainingMode m) { return mode_name(m); }
std::string_view enum_name(Reduction r) { return to_string(r); }
std::string_view enum_name(LocalPairPolicy p) { return to_string(p); }

void parse_enum(std::string_view s, TrainingMode& out) { out = parse_training_mode(s); }

void parse_enum(std::string_view s, Reduction& out) {
    if (s == "sum") {
        out = Reduction::sum;
    } else if (s == "mean") {
        out = Reduction::mean;
    } else {
        throw ConfigError("train.reduction must be 'sum' or 'mean', got '" + std::string(s) + "'");
    }
}

void parse_enum(std::string_view s, LocalPairPolicy& out) {
    if (s != "median") {
        throw ConfigError("pairs.policy must be 'median', got '" + std::string(s) + "'");
    }
    out = LocalPairPolicy::median;
}

template <typename Data, typename Visitor>
void visit_data_fields(Data& d, Visitor&& v) {
    v("data", "num_classes", d.num_classes, "number of classes (foreground factors)");
    v("data", "num_contexts", d.num_contexts, "size of the shared background-factor pool");
    v("data", "contexts_per_class", d.contexts_per_class, "backgrounds used by each class");
    v("data", "samples_per_class", d.samples_per_class, "samples per class (>= 5)");
    v("data", "input_dim", d.input_dim, "input vector width");
    v("data", "noise_sigma", d.noise_sigma, "per-coordinate Gaussian noise");
}

// Sections augment, model and train; model.input_dim is owned by the data
// section and handled by the callers.
template <typename Train, typename Visitor>
void visit_train_fields(Train& t, Visitor&& v) {
    v("augment", "noise_sigma", t.augment.noise_sigma, "augmentation noise");
    v("augment", "mask_fraction", t.augment.mask_fraction,
      "fraction of coordinates zeroed per view, in [0, 1)");

    v("model", "hidden_dim", t.model.hidden_dim, "encoder hidden width");
    v("model", "hidden_layers", t.model.hidden_layers, "encoder hidden layers");
    v("model", "feature_dim", t.model.feature_dim, "encoder output width");
    v("model", "head_hidden_dim", t.model.head_hidden_dim, "projection head hidden width");
    v("model", "embed_dim", t.model.embed_dim, "projection head output width");
    v("model", "momentum_m", t.model.momentum_m, "key-encoder EMA coefficient in [0, 1]");

    v("train", "mode", t.mode, "aug_only | aug_global | aug_global_local");
    v("train", "lr", t.lr, "SGD learning rate");
    v("train", "sgd_momentum", t.sgd_momentum, "SGD momentum in [0, 1)");
    v("train", "weight_decay", t.weight_decay, "L2 weight decay");
    v("train", "batch_size", t.batch_size, "queries per step");
    v("train", "epochs", t.epochs, "passes over the dataset");
    v("train", "tau", t.tau, "contrastive temperature");
    v("train", "queue_capacity", t.queue_capacity, "capacity K of each negative queue");
    v("train", "local_weight", t.local_weight, "multiplier of the local-branch loss");
    v("train", "reduction", t.reduction, "batch reduction: sum | mean");
    v("train", "checkpoint_every", t.checkpoint_every,
      "intermediate checkpoint interval in epochs (0 = final only)");
}

// Calls v(section, key, field, help) for every field of a run config.
template <typename Config, typename Visitor>
void visit_fields(Config& c, Visitor&& v) {
    v("", "seed", c.seed, "global seed for data, training, probe and report");
    visit_data_fields(c.data, v);
    visit_train_fields(c.train, v);

    v("pairs", "bootstrap_epochs", c.pairs.bootstrap_epochs,
      "aug_only epochs for the mining encoder when no checkpoint is given");
    v("pairs", "policy", c.pairs.policy, "local-pair placement: median");

    v("eval", "probe_lr", c.probe.lr, "linear-probe SGD learning rate");
    v("eval", "probe_epochs", c.probe.epochs, "linear-probe epochs");
    v("eval", "probe_batch_size", c.probe.batch_size, "linear-probe minibatch size");
    v("eval", "train_fraction", c.probe.train_fraction, "probe train split fraction");
    v("eval", "standardize", c.probe.standardize, "z-score features before the probe");
}

json& slot(json& doc, const char* section) { return *section ? doc[section] : doc; }

template <typename T>
json field_to_json(const T& value) {
    if constexpr (std::is_enum_v<T>) {
        return std::string(enum_name(value));
    } else {
        return value;
    }
}

template <typename T>
void field_from_json(const json& j, T& out, const std::string& where) {
    try {
        if constexpr (std::is_enum_v<T>) {
            parse_enum(j.get<std::string>(), out);
        } else if constexpr (std::is_same_v<T, bool>) {
            out = j.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<long long>() < 0)) {
                throw ConfigError(where + " must be a non-negative integer");
            }
            out = j.get<T>();
        } else {
            if (!j.is_number()) {
                throw ConfigError(where + " must be a number");
            }
            out = j.get<T>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

// Reads every visited field present in `doc` and rejects keys that no
// visited field claims.
template <typename Visit>
void read_fields(const json& doc, Visit&& visit) {
    if (!doc.is_object()) {
        throw ConfigError("config: expected a JSON object");
    }
    std::set<std::string> known;
    visit([&](const char* section, const char* key, auto& value, const char*) {
        const std::string where = *section ? std::string(section) + "." + key : std::string(key);
        known.insert(where);
        const json* sec = &doc;
        if (*section) {
            known.insert(section);
            auto it = doc.find(section);
            if (it == doc.end()) {
                return;
            }
            if (!it->is_object()) {
                throw ConfigError(std::string("config: section '") + section + "' must be an object");
            }
            sec = &*it;
        }
        if (auto it = sec->find(key); it != sec->end()) {
            field_from_json(*it, value, where);
        }
    });
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!known.count(it.key())) {
            throw ConfigError("config: unknown key '" + it.key() + "'");
        }
        if (it->is_object()) {
            for (auto jt = it->begin(); jt != it->end(); ++jt) {
                if (!known.count(it.key() + "." + jt.key())) {
                    throw ConfigError("config: unknown key '" + it.key() + "." + jt.key() + "'");
                }
            }
        }
    }
}

template <typename Visit>
json write_fields(Visit&& visit) {
    json doc = json::object();
    visit([&doc](const char* section, const char* key, const auto& value, const char*) {
        slot(doc, section)[key] = field_to_json(value);
    });
    return doc;
}

}  // namespace

void RunConfig::propagate_seed() {
    train.seed = seed;
    probe.seed = seed;
}

void RunConfig::validate() const {
    data.validate();
    train.validate();
    probe.validate();
    if (train.model.input_dim != data.input_dim) {
        throw ConfigError("model.input_dim must equal data.input_dim");
    }
}

json to_json(const RunConfig& config) {
    return write_fields([&config](auto&& v) { visit_fields(config, v); });
}

RunConfig run_config_from_json(const json& doc) {
    RunConfig config;
    read_fields(doc, [&config](auto&& v) { visit_fields(config, v); });
    config.train.model.input_dim = config.data.input_dim;
    config.propagate_seed();
    config.validate();
    return config;
}

json train_config_to_json(const TrainConfig& config) {
    json doc = write_fields([&config](auto&& v) { visit_train_fields(config, v); });
    doc["model"]["input_dim"] = config.model.input_dim;
    doc["seed"] = config.seed;
    return doc;
}

TrainConfig train_config_from_json(const json& doc) {
    TrainConfig config;
    read_fields(
        doc,
        [&config](auto&& v) {
            visit_train_fields(config, v);
            v("model", "input_dim", config.model.input_dim, "");
            v("", "seed", config.seed, "");
        });
    config.validate();
    return config;
}

json data_config_to_json(const DataConfig& config) {
    RunConfig rc;
    rc.data = config;
    return to_json(rc)["data"];
}

DataConfig data_config_from_json(const json& doc) {
    json run = json::object();
    run["data"] = doc;
    RunConfig rc = run_config_from_json(run);
    return rc.data;
}

void apply_override(json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override '" + std::string(assignment) + "' must look like section.key=value");
    }
    const std::string path(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    const auto dot = path.find('.');
    if (dot == std::string::npos) {
        doc[path] = value;
    } else {
        doc[path.substr(0, dot)][path.substr(dot + 1)] = value;
    }
}

std::string describe_config_fields() {
    const RunConfig defaults;
    std::ostringstream out;
    visit_fields(defaults, [&out](const char* section, const char* key, const auto& value,
                                  const char* help) {
        std::string name = *section ? std::string(section) + "." + key : std::string(key);
        out << "  " << name;
        for (std::size_t i = name.size(); i < 26; ++i) {
            out << ' ';
        }
        out << " default " << field_to_json(value).dump() << "  " << help << '\n';
    });
    return out.str();
}

}  // namespace flags
