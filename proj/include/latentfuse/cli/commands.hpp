#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "latentfuse/cli/config.hpp"
#include "latentfuse/cli/manifest.hpp"

namespace latentfuse::cli {

struct CommandResult {
    std::vector<std::filesystem::path> outputs;
    std::filesystem::path manifest;
};

/// Per-modality row of fuse_summary.csv.
struct FuseSummaryRow {
    std::size_t modality = 0;
    std::size_t n_measurements = 0;
    double noise_std = 0.0;
    double mean_recon_mse = 0.0;
    double var_recon_mse = 0.0;
    double autoencoder_recon_mse = 0.0;
    std::size_t n_samples = 0;
};

struct FuseCommandResult : CommandResult {
    std::vector<FuseSummaryRow> summary;
};

/// Dataset (binary or CSV by extension) plus truth.json with the generating
/// prior and generator weights. Creates the output directory.
CommandResult cmd_gen_data(const ExperimentConfig& config);

/// Checkpoint plus loss_curve.csv (epoch,loss). With resume set, continues
/// from the existing checkpoint and appends to the curve.
CommandResult cmd_train(const ExperimentConfig& config);

/// fuse_records.csv, fuse_summary.csv and, optionally, reconstructions.csv
/// and z_map.csv for the first fusion.n_samples rows of the chosen split.
FuseCommandResult cmd_fuse(const ExperimentConfig& config);

/// Runs one fuse (or classify, for the shots axis) per sweep value in
/// sweep_<axis>/<value>/, then writes sweep_<axis>.csv (the per-point CSVs
/// concatenated behind a leading sweep_<axis> value column) and sweep_<axis>.dat.
CommandResult cmd_sweep(const ExperimentConfig& config);

/// classify_results.csv (method,shots,seed,f1_macro), classify_summary.csv
/// and classify_summary.dat.
CommandResult cmd_classify(const ExperimentConfig& config);

/// Sweep configuration for a single axis value.
ExperimentConfig sweep_point(const ExperimentConfig& config, double value);

/// Shortest round-trip decimal form, used for sweep labels and axis columns.
std::string format_value(double v);

}  // namespace latentfuse::cli
