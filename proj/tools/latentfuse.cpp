#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "acceptance.hpp"
#include "latentfuse/cli/commands.hpp"
#include "latentfuse/fusion/fusion.hpp"
#include "latentfuse/mvae/model.hpp"
#include "latentfuse/numkit/tensor.hpp"
#include "latentfuse/protein/protein.hpp"

namespace lc = latentfuse::cli;
using lc::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string output_dir;
    std::optional<unsigned> threads;
    // Applied to every sampler.
    std::optional<std::size_t> n_measurements;
    std::optional<double> noise_std;
    // Per-command overrides expressed as a config fragment.
    json overlay = json::object();
};

// Builds the effective config: defaults, then the config file, then the
// LATENTFUSE_SEED environment variable, then command-line flags.
lc::ExperimentConfig effective_config(const Common& c) {
    lc::ExperimentConfig config = lc::default_config();
    if (!c.config_path.empty()) config = lc::load_config(c.config_path, config);
    if (auto env = lc::env_seed()) config.seed = *env;
    json flags = c.overlay;
    if (c.seed) flags["seed"] = *c.seed;
    if (!c.output_dir.empty()) flags["output_dir"] = c.output_dir;
    if (c.threads) flags["fusion"]["threads"] = *c.threads;
    config = lc::merge_config(config, flags);
    for (auto& spec : config.samplers) {
        if (c.n_measurements) spec.n_measurements = *c.n_measurements;
        if (c.noise_std) spec.noise_std = *c.noise_std;
    }
    config.validate();
    return config;
}

void report(const lc::CommandResult& r) {
    for (const auto& p : r.outputs) std::printf("wrote %s\n", p.string().c_str());
    std::printf("manifest %s\n", r.manifest.string().c_str());
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const lc::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const latentfuse::mvae::MissingModalityError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const latentfuse::numkit::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumerical;
    } catch (const latentfuse::fusion::FusionError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumerical;
    } catch (const latentfuse::mvae::DivergenceError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumerical;
    } catch (const lc::IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const latentfuse::protein::DatasetFormatError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const latentfuse::mvae::CheckpointError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return kIo;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("-c,--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "Global seed (overrides LATENTFUSE_SEED and the config)");
    sub->add_option("-o,--out", c.output_dir, "Output directory");
    sub->add_option("-j,--threads", c.threads, "Worker threads for fusion")->check(CLI::PositiveNumber);
}

// Option whose value, when given, is written into the overlay at `block`/`key`.
template <class T>
CLI::Option* overlay_option(CLI::App* sub, Common& c, const std::string& flag, const char* block, const char* key,
                            const std::string& help) {
    return sub->add_option_function<T>(
        flag,
        [&c, block, key](const T& v) {
            if (block) {
                c.overlay[block][key] = v;
            } else {
                c.overlay[key] = v;
            }
        },
        help);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latentfuse: multimodal fusion in a learned latent space"};
    app.require_subcommand(1);
    app.set_version_flag("--version", LATENTFUSE_VERSION);

    Common common;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic protein dataset");
    add_common(gen, common);
    overlay_option<std::size_t>(gen, common, "-n,--n", "dataset", "n_samples", "Number of samples");
    overlay_option<std::string>(gen, common, "--dataset", "dataset", "path", "Dataset file (.lfds or .csv)");

    auto* train = app.add_subcommand("train", "Train the multimodal VAE");
    add_common(train, common);
    overlay_option<int>(train, common, "--epochs", "mvae_train", "epochs", "Training epochs");
    overlay_option<std::string>(train, common, "--posterior-mode", "mvae_train", "posterior_mode",
                                "joint, poe or moe");
    overlay_option<std::string>(train, common, "--checkpoint", "mvae_train", "checkpoint", "Checkpoint file");
    train->add_flag_callback("--resume", [&] { common.overlay["mvae_train"]["resume"] = true; },
                             "Continue from the existing checkpoint");

    auto* fuse = app.add_subcommand("fuse", "Fuse subsampled observations of held-out samples");
    add_common(fuse, common);
    overlay_option<std::size_t>(fuse, common, "--n-samples", "fusion", "n_samples", "Samples to fuse");
    overlay_option<int>(fuse, common, "--restarts", "fusion", "n_restarts", "Random restarts per sample");
    fuse->add_option("--n-measurements", common.n_measurements, "Measurements per sampler");
    fuse->add_option("--noise", common.noise_std, "Observation noise std per sampler");
    overlay_option<double>(fuse, common, "--prior-weight", "fusion", "prior_weight", "Prior term weight");

    auto* sweep = app.add_subcommand("sweep", "Repeat fuse (or classify) over one axis");
    add_common(sweep, common);
    overlay_option<std::string>(sweep, common, "--axis", "sweep", "axis",
                                "n_measurements, noise_std, missing_ratio or shots");
    overlay_option<std::vector<double>>(sweep, common, "--values", "sweep", "values", "Axis values");
    overlay_option<std::size_t>(sweep, common, "--n-samples", "fusion", "n_samples", "Samples to fuse per point");
    sweep->add_option("--n-measurements", common.n_measurements, "Measurements per sampler");
    sweep->add_option("--noise", common.noise_std, "Observation noise std per sampler");

    auto* classify = app.add_subcommand("classify", "Few-shot classification comparison");
    add_common(classify, common);
    overlay_option<std::vector<std::string>>(classify, common, "--methods", "eval", "methods", "Methods to run");
    overlay_option<std::vector<int>>(classify, common, "--shots", "eval", "shots", "Shots per class");
    overlay_option<int>(classify, common, "--seeds", "eval", "n_seeds", "Seeds per shot count");
    overlay_option<std::string>(classify, common, "--embedding", "eval", "embedding", "posterior_mean or fusion");

    auto* verify = app.add_subcommand("verify", "Run the acceptance suite");
    latentfuse::acceptance::AcceptanceOptions acc;
    std::string work_dir = acc.work_dir.string();
    verify->add_option("--work-dir", work_dir, "Scratch directory (reused between runs)");
    verify->add_option("--only", acc.only, "Run only these criteria")->check(CLI::Range(1, 10));
    verify->add_option("-j,--threads", acc.threads, "Worker threads for fusion")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    return run_guarded([&]() -> int {
        if (verify->parsed()) {
            acc.work_dir = work_dir;
            int failed = 0;
            const auto results = latentfuse::acceptance::run_acceptance(acc, [&](const auto& r) {
                std::printf("%s\n", latentfuse::acceptance::format_result(r).c_str());
                std::fflush(stdout);
                if (!r.passed) ++failed;
            });
            std::printf("%zu/%zu criteria passed\n", results.size() - static_cast<std::size_t>(failed),
                        results.size());
            return failed == 0 ? kOk : kFailure;
        }
        const auto config = effective_config(common);
        if (gen->parsed()) {
            report(lc::cmd_gen_data(config));
        } else if (train->parsed()) {
            report(lc::cmd_train(config));
        } else if (fuse->parsed()) {
            const auto r = lc::cmd_fuse(config);
            for (const auto& row : r.summary) {
                std::printf("modality %zu  n=%zu  sigma=%g  recon_mse %.6g (var %.3g)  autoencoder %.6g\n",
                            row.modality, row.n_measurements, row.noise_std, row.mean_recon_mse, row.var_recon_mse,
                            row.autoencoder_recon_mse);
            }
            report(r);
        } else if (sweep->parsed()) {
            report(lc::cmd_sweep(config));
        } else if (classify->parsed()) {
            report(lc::cmd_classify(config));
        }
        return kOk;
    });
}
