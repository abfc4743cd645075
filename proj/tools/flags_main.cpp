#include <malloc.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flags/config.hpp"
#include "flags/error.hpp"
#include "flags/io.hpp"
#include "flags/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kConfig = 2,
    kIntegrity = 3,
    kNumeric = 4,
    kThreshold = 5,
};

struct GlobalOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

// Precedence, lowest first: defaults, FLAGS_SEED, config file, --set, --seed.
flags::RunConfig resolve_config(const GlobalOptions& opt) {
    json doc = json::object();
    if (!opt.config_path.empty()) {
        try {
            doc = json::parse(flags::read_file(opt.config_path));
        } catch (const json::exception& e) {
            throw flags::ConfigError(opt.config_path + ": " + e.what());
        }
        if (!doc.is_object()) {
            throw flags::ConfigError(opt.config_path + ": expected a JSON object");
        }
    }
    if (!doc.contains("seed")) {
        if (const char* env = std::getenv("FLAGS_SEED"); env != nullptr && *env != '\0') {
            try {
                std::size_t used = 0;
                doc["seed"] = std::stoull(env, &used);
                if (env[used] != '\0') {
                    throw std::invalid_argument("trailing characters");
                }
            } catch (const std::exception&) {
                throw flags::ConfigError(std::string("FLAGS_SEED is not an integer: ") + env);
            }
        }
    }
    for (const std::string& o : opt.overrides) {
        flags::apply_override(doc, o);
    }
    if (opt.seed) {
        doc["seed"] = *opt.seed;
    }
    return flags::run_config_from_json(doc);
}

void echo_config(const flags::RunConfig& config, const fs::path& path) {
    flags::write_file_atomic(path, flags::to_json(config).dump(2) + "\n");
}

// Sibling provenance file for single-file outputs: out.jsonl -> out.config.json.
fs::path config_beside(const fs::path& file) {
    fs::path p = file;
    p.replace_extension(".config.json");
    return p;
}

std::string stage;

int run_gen_data(const GlobalOptions& g, const fs::path& out) {
    const flags::RunConfig config = resolve_config(g);
    stage = "gen-data";
    const flags::SyntheticDataset data = flags::gen_synthetic(config.data, config.seed);
    flags::save_dataset(data, out);
    echo_config(config, config_beside(out));
    std::cout << "wrote " << data.samples.size() << " samples to " << out.string() << "\n";
    return kOk;
}

int run_gen_pairs(const GlobalOptions& g, const fs::path& data_path, const fs::path& out,
                  const std::string& checkpoint, const std::string& features_out) {
    const flags::RunConfig config = resolve_config(g);
    stage = "load data";
    const flags::SyntheticDataset data = flags::load_dataset(data_path);
    flags::MiningResult mined;
    if (!checkpoint.empty()) {
        stage = "load checkpoint";
        const flags::TrainState prior = flags::load_checkpoint(checkpoint);
        stage = "gen-pairs";
        mined = flags::mine_pairs(config, data, &prior.model.query_encoder, "checkpoint " + checkpoint);
    } else {
        stage = "gen-pairs (bootstrap)";
        mined = flags::mine_pairs(config, data);
    }
    flags::save_manifest(mined.manifest, out);
    if (!features_out.empty()) {
        flags::save_features(mined.features, features_out);
    }
    echo_config(config, config_beside(out));
    std::cout << "wrote " << mined.manifest.entries.size() << " manifest entries to " << out.string()
              << " (features: " << mined.features.provenance << ")\n";
    return kOk;
}

int run_train(const GlobalOptions& g, const fs::path& data_path, const std::string& manifest_path,
              const fs::path& out) {
    const flags::RunConfig config = resolve_config(g);
    stage = "load data";
    const flags::SyntheticDataset data = flags::load_dataset(data_path);
    stage = "load manifest";
    flags::PairManifest manifest;
    if (!manifest_path.empty()) {
        manifest = flags::load_manifest(manifest_path);
    } else if (flags::uses_global_pairs(config.train.mode)) {
        throw flags::ConfigError("train: mode " + std::string(flags::mode_name(config.train.mode)) +
                                 " needs --manifest");
    }
    stage = "train";
    echo_config(config, out / "config.json");
    const fs::path ckpt = flags::train(config.train, data, manifest, out);
    std::cout << "wrote " << ckpt.string() << "\n";
    return kOk;
}

int run_eval(const GlobalOptions& g, const fs::path& checkpoint, const fs::path& data_path,
             const fs::path& out) {
    const flags::RunConfig config = resolve_config(g);
    stage = "load checkpoint";
    const flags::TrainState state = flags::load_checkpoint(checkpoint);
    stage = "load data";
    const flags::SyntheticDataset data = flags::load_dataset(data_path);
    stage = "eval";
    const json report = flags::eval_report(config, state, data);
    flags::write_file_atomic(out, report.dump(2) + "\n");
    echo_config(config, config_beside(out));
    std::cout << "probe top-1 " << report["probe"]["top1_accuracy"].get<double>()
              << ", context gap global " << report["global"]["context_gap"].get<double>()
              << " local " << report["local"]["context_gap"].get<double>() << "\n";
    return kOk;
}

int run_repro(const GlobalOptions& g, const std::string& out) {
    const flags::RunConfig config = resolve_config(g);
    std::optional<fs::path> dir;
    if (!out.empty()) {
        dir = out;
    }
    const flags::ReproResult r = flags::repro(config, dir, [](const std::string& s) {
        stage = s;
        std::cerr << "[" << s << "]\n";
    });
    std::cout << r.table() << "\n";
    for (const flags::ThresholdCheck& c : r.checks) {
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    }
    return r.pass() ? kOk : kThreshold;
}

}  // namespace

int main(int argc, char** argv) {
    // Per-step logit blocks are ~1 MB; keep them on the heap instead of
    // mapping and trimming pages every step.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);

    CLI::App app{"FLAGS: contrastive pre-training with global and local positive pairs"};
    app.require_subcommand(1);
    app.footer("Config fields (JSON sections; override with --set section.key=value):\n" +
               flags::describe_config_fields() +
               "\nSeed precedence: --seed, then --set seed=, then the config file, then FLAGS_SEED.\n"
               "Exit codes: 0 ok, 2 config, 3 data/manifest integrity, 4 numeric, 5 repro threshold.");

    GlobalOptions g;
    auto add_globals = [&g](CLI::App* sub) {
        sub->add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--set", g.overrides, "override a config field: section.key=value");
        sub->add_option("--seed", g.seed, "global seed");
    };

    std::string out, data_path, manifest_path, checkpoint, features_out;

    CLI::App* gen_data = app.add_subcommand("gen-data", "generate the synthetic dataset (JSON lines)");
    add_globals(gen_data);
    gen_data->add_option("--out", out, "dataset file")->required();

    CLI::App* gen_pairs = app.add_subcommand("gen-pairs", "mine global and local positive pairs");
    add_globals(gen_pairs);
    gen_pairs->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
    gen_pairs->add_option("--out", out, "manifest file")->required();
    gen_pairs->add_option("--checkpoint", checkpoint,
                          "mine with this checkpoint's query encoder instead of a bootstrap run")
        ->check(CLI::ExistingFile);
    gen_pairs->add_option("--features-out", features_out, "also write the feature table");

    CLI::App* train = app.add_subcommand("train", "train query and key networks");
    add_globals(train);
    train->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
    train->add_option("--manifest", manifest_path, "pair manifest (not needed for aug_only)")
        ->check(CLI::ExistingFile);
    train->add_option("--out", out, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "linear probe and embedding report");
    add_globals(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", out, "report file")->required();

    CLI::App* repro = app.add_subcommand("repro", "run all three training modes and compare");
    add_globals(repro);
    repro->add_option("--out", out, "artifact directory (optional)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        stage = "config";
        if (*gen_data) {
            return run_gen_data(g, out);
        }
        if (*gen_pairs) {
            return run_gen_pairs(g, data_path, out, checkpoint, features_out);
        }
        if (*train) {
            return run_train(g, data_path, manifest_path, out);
        }
        if (*eval) {
            return run_eval(g, checkpoint, data_path, out);
        }
        return run_repro(g, out);
    } catch (const flags::ConfigError& e) {
        std::cerr << "flags: " << stage << ": config error: " << e.what() << "\n";
        return kConfig;
    } catch (const flags::IntegrityError& e) {
        std::cerr << "flags: " << stage << ": integrity error: " << e.what() << "\n";
        return kIntegrity;
    } catch (const flags::DimensionError& e) {
        std::cerr << "flags: " << stage << ": integrity error: " << e.what() << "\n";
        return kIntegrity;
    } catch (const flags::NumericError& e) {
        std::cerr << "flags: " << stage << ": numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "flags: " << stage << ": " << e.what() << "\n";
        return kInternal;
    }
}
