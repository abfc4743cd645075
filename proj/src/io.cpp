#include "flags/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "flags/config.hpp"
#include "flags/error.hpp"

namespace flags {

using nlohmann::json;

namespace {

json parse_json(std::string_view text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw IntegrityError(what + ": malformed JSON: " + e.what());
    }
}

template <typename F>
auto guarded(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw IntegrityError(what + ": " + e.what());
    }
}

void expect_version(const json& j, std::string_view key, std::string_view version,
                    const std::string& what) {
    const auto it = j.find(std::string(key));
    if (it == j.end() || !it->is_string() || it->get<std::string>() != version) {
        throw IntegrityError(what + ": expected " + std::string(key) + " \"" +
                             std::string(version) + "\"");
    }
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (!line.empty()) {
            lines.push_back(line);
        }
        if (nl == std::string_view::npos) {
            break;
        }
        text.remove_prefix(nl + 1);
    }
    return lines;
}

json linear_to_json(const Linear& l) {
    return json{{"weight", tensor_to_json(l.weight)}, {"bias", tensor_to_json(l.bias)}};
}

Linear linear_from_json(const json& j) {
    Linear l{tensor_from_json(j.at("weight")), tensor_from_json(j.at("bias"))};
    if (l.weight.rank() != 2) {
        // A single-input layer serializes as [[w...]]; anything else is corrupt.
        throw IntegrityError("checkpoint: layer weight must be a matrix");
    }
    if (l.bias.rank() != 1) {
        l.bias = Tensor::vector(l.bias.data());
    }
    return l;
}

json encoder_to_json(const EncoderParams& e) {
    json layers = json::array();
    for (const Linear& l : e.layers) {
        layers.push_back(linear_to_json(l));
    }
    return layers;
}

EncoderParams encoder_from_json(const json& j) {
    EncoderParams e;
    for (const json& l : j) {
        e.layers.push_back(linear_from_json(l));
    }
    return e;
}

json head_to_json(const ProjectionHead& h) {
    return json{{"hidden", linear_to_json(h.hidden)}, {"output", linear_to_json(h.output)}};
}

ProjectionHead head_from_json(const json& j) {
    return {linear_from_json(j.at("hidden")), linear_from_json(j.at("output"))};
}

}  // namespace

json tensor_to_json(const Tensor& t) {
    if (t.rank() == 1) {
        return t.data();
    }
    if (t.rank() != 2) {
        throw DimensionError("tensor_to_json: only rank 1 and 2 are serializable");
    }
    json rows = json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
        rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
    }
    return rows;
}

Tensor tensor_from_json(const json& j) {
    if (!j.is_array()) {
        throw IntegrityError("tensor: expected an array");
    }
    if (j.empty() || !j.front().is_array()) {
        return guarded("tensor", [&] { return Tensor::vector(j.get<std::vector<double>>()); });
    }
    const std::size_t rows = j.size();
    const std::size_t cols = j.front().size();
    std::vector<double> values;
    values.reserve(rows * cols);
    for (const json& row : j) {
        if (!row.is_array() || row.size() != cols) {
            throw IntegrityError("tensor: ragged rows");
        }
        for (const json& v : row) {
            if (!v.is_number()) {
                throw IntegrityError("tensor: non-numeric entry");
            }
            values.push_back(v.get<double>());
        }
    }
    return Tensor::matrix(rows, cols, std::move(values));
}

json queue_to_json(const KeyQueue& q) {
    json entries = json::array();
    for (std::size_t i = 0; i < q.size(); ++i) {
        entries.push_back(std::vector<double>(q.entry(i).begin(), q.entry(i).end()));
    }
    return json{{"capacity", q.capacity()},
                {"embed_dim", q.embed_dim()},
                {"branch", std::string(branch_name(q.branch()))},
                {"entries", std::move(entries)}};
}

KeyQueue queue_from_json(const json& j, Branch branch) {
    return guarded("queue", [&] {
        KeyQueue q(j.at("capacity").get<std::size_t>(), j.at("embed_dim").get<std::size_t>(), branch);
        if (j.at("branch").get<std::string>() != branch_name(branch)) {
            throw IntegrityError("queue: branch tag mismatch");
        }
        const json& entries = j.at("entries");
        if (entries.size() > q.capacity()) {
            throw IntegrityError("queue: more entries than capacity");
        }
        if (!entries.empty()) {
            q.enqueue_batch(tensor_from_json(entries));
        }
        return q;
    });
}

json checkpoint_to_json(const TrainState& s) {
    json velocity = json::array();
    for (const Tensor& v : s.velocity) {
        velocity.push_back(tensor_to_json(v));
    }
    return json{
        {"version", std::string(kCheckpointVersion)},
        {"config", train_config_to_json(s.config)},
        {"query_encoder", encoder_to_json(s.model.query_encoder)},
        {"key_encoder", encoder_to_json(s.model.key_encoder)},
        {"heads",
         {{"g_q", head_to_json(s.model.global_query)},
          {"l_q", head_to_json(s.model.local_query)},
          {"g_k", head_to_json(s.model.global_key)},
          {"l_k", head_to_json(s.model.local_key)}}},
        {"momentum_m", s.model.config.momentum_m},
        {"queues", {{"global", queue_to_json(s.global_queue)}, {"local", queue_to_json(s.local_queue)}}},
        {"velocity", std::move(velocity)},
        {"rng_state", s.rng.state()},
        {"step", s.step},
        {"epoch", s.epoch},
    };
}

TrainState checkpoint_from_json(const json& j) {
    return guarded("checkpoint", [&] {
        expect_version(j, "version", kCheckpointVersion, "checkpoint");
        TrainConfig config = train_config_from_json(j.at("config"));
        ModelState model;
        model.config = config.model;
        model.config.momentum_m = j.at("momentum_m").get<double>();
        model.query_encoder = encoder_from_json(j.at("query_encoder"));
        model.key_encoder = encoder_from_json(j.at("key_encoder"));
        const json& heads = j.at("heads");
        model.global_query = head_from_json(heads.at("g_q"));
        model.local_query = head_from_json(heads.at("l_q"));
        model.global_key = head_from_json(heads.at("g_k"));
        model.local_key = head_from_json(heads.at("l_k"));
        validate_model(model);
        if (model.query_encoder.input_dim() != config.model.input_dim ||
            model.query_encoder.output_dim() != config.model.feature_dim) {
            throw IntegrityError("checkpoint: weights disagree with the stored config");
        }
        config.model.momentum_m = model.config.momentum_m;

        TrainState s{config,
                     std::move(model),
                     {},
                     queue_from_json(j.at("queues").at("global"), Branch::global),
                     queue_from_json(j.at("queues").at("local"), Branch::local),
                     j.at("step").get<std::uint64_t>(),
                     j.at("epoch").get<std::uint64_t>(),
                     Rng()};
        s.rng.restore(j.at("rng_state").get<std::string>());
        for (const json& v : j.at("velocity")) {
            s.velocity.push_back(tensor_from_json(v));
        }
        const auto params = query_parameters(std::as_const(s.model));
        if (s.velocity.size() != params.size()) {
            throw IntegrityError("checkpoint: velocity count does not match parameters");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (s.velocity[i].size() != params[i]->size()) {
                throw IntegrityError("checkpoint: velocity shape does not match parameter");
            }
            s.velocity[i] = Tensor(params[i]->shape(), s.velocity[i].data());
        }
        return s;
    });
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    write_file_atomic(path, checkpoint_to_json(state).dump() + "\n");
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_json(parse_json(read_file(path), path.string()));
}

std::string dataset_to_jsonl(const SyntheticDataset& data) {
    std::string out = json{{"version", std::string(kDatasetVersion)},
                           {"seed", data.seed},
                           {"config", data_config_to_json(data.config)},
                           {"class_factors", tensor_to_json(data.class_factors)},
                           {"context_factors", tensor_to_json(data.context_factors)},
                           {"count", data.samples.size()}}
                          .dump();
    out += '\n';
    for (const Sample& s : data.samples) {
        out += json{{"id", s.id}, {"class", s.class_id}, {"context", s.context_id}, {"x", s.x}}.dump();
        out += '\n';
    }
    return out;
}

SyntheticDataset dataset_from_jsonl(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty()) {
        throw IntegrityError("dataset: empty file");
    }
    return guarded("dataset", [&] {
        const json header = parse_json(lines[0], "dataset header");
        expect_version(header, "version", kDatasetVersion, "dataset");
        SyntheticDataset ds;
        ds.seed = header.at("seed").get<std::uint64_t>();
        ds.config = data_config_from_json(header.at("config"));
        ds.class_factors = tensor_from_json(header.at("class_factors"));
        ds.context_factors = tensor_from_json(header.at("context_factors"));
        const std::size_t count = header.at("count").get<std::size_t>();
        if (lines.size() != count + 1) {
            throw IntegrityError("dataset: header announces " + std::to_string(count) +
                                 " samples, file holds " + std::to_string(lines.size() - 1));
        }
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const json row = parse_json(lines[i], "dataset row " + std::to_string(i));
            Sample s;
            s.id = row.at("id").get<std::size_t>();
            s.class_id = row.at("class").get<std::size_t>();
            s.context_id = row.at("context").get<std::size_t>();
            s.x = row.at("x").get<std::vector<double>>();
            ds.samples.push_back(std::move(s));
        }
        validate_dataset(ds);
        return ds;
    });
}

void save_dataset(const SyntheticDataset& data, const std::filesystem::path& path) {
    write_file_atomic(path, dataset_to_jsonl(data));
}

SyntheticDataset load_dataset(const std::filesystem::path& path) {
    return dataset_from_jsonl(read_file(path));
}

std::string manifest_to_jsonl(const PairManifest& manifest) {
    std::string out;
    for (const ManifestEntry& e : manifest.entries) {
        out += json{{"schema", std::string(kManifestVersion)},
                    {"id", e.id},
                    {"class", e.class_id},
                    {"global", e.global},
                    {"local", e.local}}
                   .dump();
        out += '\n';
    }
    return out;
}

PairManifest manifest_from_jsonl(std::string_view text) {
    PairManifest m;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const json row = parse_json(lines[i], "manifest line " + std::to_string(i + 1));
        guarded("manifest line " + std::to_string(i + 1), [&] {
            expect_version(row, "schema", kManifestVersion, "manifest");
            m.entries.push_back({row.at("id").get<std::size_t>(),
                                 row.at("class").get<std::size_t>(),
                                 row.at("global").get<std::array<std::size_t, 2>>(),
                                 row.at("local").get<std::array<std::size_t, 2>>()});
            return 0;
        });
    }
    return m;
}

void save_manifest(const PairManifest& manifest, const std::filesystem::path& path) {
    write_file_atomic(path, manifest_to_jsonl(manifest));
}

PairManifest load_manifest(const std::filesystem::path& path) {
    return manifest_from_jsonl(read_file(path));
}

std::string features_to_jsonl(const FeatureTable& table) {
    std::string out = json{{"version", std::string(kFeaturesVersion)},
                           {"provenance", table.provenance},
                           {"dim", table.dim()},
                           {"count", table.size()}}
                          .dump();
    out += '\n';
    for (std::size_t r = 0; r < table.size(); ++r) {
        const auto row = table.features.row(r);
        out += json{{"id", table.sample_ids[r]},
                    {"class", table.class_ids[r]},
                    {"f", std::vector<double>(row.begin(), row.end())}}
                   .dump();
        out += '\n';
    }
    return out;
}

FeatureTable features_from_jsonl(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty()) {
        throw IntegrityError("features: empty file");
    }
    return guarded("features", [&] {
        const json header = parse_json(lines[0], "features header");
        expect_version(header, "version", kFeaturesVersion, "features");
        FeatureTable t;
        t.provenance = header.at("provenance").get<std::string>();
        const std::size_t dim = header.at("dim").get<std::size_t>();
        const std::size_t count = header.at("count").get<std::size_t>();
        if (lines.size() != count + 1) {
            throw IntegrityError("features: row count disagrees with header");
        }
        std::vector<double> values;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const json row = parse_json(lines[i], "features row");
            t.sample_ids.push_back(row.at("id").get<std::size_t>());
            t.class_ids.push_back(row.at("class").get<std::size_t>());
            const auto f = row.at("f").get<std::vector<double>>();
            if (f.size() != dim) {
                throw IntegrityError("features: row width disagrees with header");
            }
            values.insert(values.end(), f.begin(), f.end());
        }
        t.features = Tensor::matrix(count, dim, std::move(values));
        validate_feature_table(t);
        return t;
    });
}

void save_features(const FeatureTable& table, const std::filesystem::path& path) {
    write_file_atomic(path, features_to_jsonl(table));
}

FeatureTable load_features(const std::filesystem::path& path) {
    return features_from_jsonl(read_file(path));
}

json probe_to_json(const ProbeResult& probe) {
    json per_class = json::array();
    for (double a : probe.per_class_accuracy) {
        per_class.push_back(std::isnan(a) ? json(nullptr) : json(a));
    }
    return json{{"top1_accuracy", probe.top1_accuracy},
                {"train_accuracy", probe.train_accuracy},
                {"per_class_accuracy", std::move(per_class)},
                {"confusion", probe.confusion},
                {"train_count", probe.train_ids.size()},
                {"eval_count", probe.eval_ids.size()}};
}

json report_to_json(const EmbeddingReport& report) {
    auto sub = [](const SubspaceStats& s) {
        return json{{"alignment", s.alignment},
                    {"uniformity", s.uniformity},
                    {"within_class_cos", s.within_class_cos},
                    {"between_class_cos", s.between_class_cos},
                    {"same_context_cos", s.same_context_cos},
                    {"diff_context_cos", s.diff_context_cos},
                    {"context_gap", s.context_gap()}};
    };
    return json{{"global", sub(report.global)}, {"local", sub(report.local)}};
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw ConfigError("cannot write " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw ConfigError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace flags
