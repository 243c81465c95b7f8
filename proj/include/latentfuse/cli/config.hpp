#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentfuse/eval/classify.hpp"
#include "latentfuse/fusion/fusion.hpp"
#include "latentfuse/mvae/model.hpp"
#include "latentfuse/protein/protein.hpp"
#include "latentfuse/samplers/samplers.hpp"

namespace latentfuse::cli {

using json = nlohmann::json;

/// Invalid or inconsistent configuration (exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem or format failure on an input/output artifact (exit code 4).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kConfigVersion = 1;

struct DatasetBlock {
    std::string path = "dataset.lfds";  // relative paths resolve against output_dir
    std::size_t n_samples = 10000;
    protein::PriorOptions prior;
    protein::GeneratorOptions generator;
};

struct TrainBlock {
    std::string checkpoint = "model.json";
    mvae::TrainConfig train;
    mvae::ModelShape shape;
    bool resume = false;
};

struct FuseBlock {
    fusion::FusionConfig fusion;
    std::size_t n_samples = 100;
    protein::Split split = protein::Split::test;
    std::vector<bool> observe;  // empty: all modalities
    unsigned threads = 1;
    bool dump_reconstructions = true;
};

struct EvalBlock {
    std::vector<int> shots{1, 5, 10};
    int n_seeds = 5;
    std::vector<std::string> methods{"single_modality_1", "single_modality_2", "probability_fusion",
                                     "dual_branch", "sflr"};
    eval::EmbeddingPath embedding = eval::EmbeddingPath::posterior_mean;
    std::size_t max_queries = 0;
    eval::BaselineConfig baseline;
};

enum class SweepAxis { n_measurements, noise_std, missing_ratio, shots };

std::string to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& name);

struct SweepBlock {
    SweepAxis axis = SweepAxis::n_measurements;
    std::vector<double> values{1, 2, 4, 8};
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    DatasetBlock dataset;
    TrainBlock mvae_train;
    /// One per modality. A sampler seed of 0 means "derive from `seed`".
    std::vector<samplers::SamplerSpec> samplers;
    FuseBlock fusion;
    EvalBlock eval;
    SweepBlock sweep;

    std::filesystem::path resolve(const std::string& path) const;
    std::filesystem::path dataset_path() const { return resolve(dataset.path); }
    std::filesystem::path checkpoint_path() const { return resolve(mvae_train.checkpoint); }

    /// Sampler specs with derived seeds filled in.
    std::vector<samplers::SamplerSpec> sampler_specs() const;

    /// Throws ConfigError for settings that cannot be run.
    void validate() const;
};

/// Default configuration: two modalities observed through n=2 random projections.
ExperimentConfig default_config();

/// Merges a JSON document into `base`. Unknown keys and wrong types raise
/// ConfigError; keys that are absent keep their value in `base`.
ExperimentConfig merge_config(ExperimentConfig base, const json& doc);
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = default_config());

json to_json(const ExperimentConfig& config);

/// SHA-256 of the canonical (sorted-key, compact) JSON form.
std::string config_hash(const ExperimentConfig& config);

/// Value of LATENTFUSE_SEED, if set. Malformed values raise ConfigError.
std::optional<std::uint64_t> env_seed();

}  // namespace latentfuse::cli
