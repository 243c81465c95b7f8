#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "latentfuse/mvae/model.hpp"
#include "latentfuse/numkit/optim.hpp"
#include "latentfuse/samplers/samplers.hpp"

namespace latentfuse::fusion {

using numkit::Rng;
using numkit::Tensor;
using numkit::Var;
using numkit::Tape;
using samplers::Sampler;

/// Observations of one scene, indexed by modality; nullopt marks a modality
/// that was not observed and contributes no term.
using ObservationSet = std::vector<std::optional<std::vector<double>>>;

struct FusionConfig {
    /// Weight of the prior term ||z||^2.
    double prior_weight = 0.1;
    /// Per-modality data-term weights. Empty: 1/(2 sigma_m^2) from the
    /// sampler noise level, or 1 when the sampler is noiseless.
    std::vector<double> modality_weights;
    numkit::OptimizerKind optimizer = numkit::OptimizerKind::adam;
    /// Adam step size, or the default per-modality SGD rate.
    double learning_rate = 0.01;
    /// SGD only: per-modality rates eta_m (empty: learning_rate for each)
    /// and the prior-term rate eta_0.
    std::vector<double> modality_learning_rates;
    double prior_learning_rate = 0.01;
    int max_iters = 2000;
    double tol = 1e-8;
    int window = 50;
    int n_restarts = 10;
    int inner_steps = 1;
    /// Initialise from the encoder posterior when identity observations allow it.
    bool impute_init = true;

    void validate() const;
};

struct FusionResult {
    std::vector<double> z_map;
    std::vector<double> restart_losses;  // +inf for failed restarts
    std::vector<double> loss_trace;      // full objective per iteration, winning restart
    std::vector<std::vector<double>> reconstructions;
    std::size_t best_restart = 0;
    std::size_t failed_restarts = 0;
    bool converged = false;
    int iterations = 0;

    double final_loss() const { return restart_losses.at(best_restart); }
};

/// Raised when every restart of a fusion run fails numerically.
class FusionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Resolved data-term weights for the given samplers.
std::vector<double> resolve_weights(const FusionConfig& config, std::span<const Sampler> samplers);

/// Per-row objective lambda_0 ||z||^2 + sum_m lambda_m ||y_m - chi_m(psi_m(z))||^2
/// for a batch of latents (one per row), Rx1. Decoders enter frozen.
Var fusion_loss_rows(const Var& z, const ObservationSet& observations, const mvae::MvaeModel& model,
                     std::span<const Sampler> samplers, double prior_weight,
                     std::span<const double> weights);

/// Scalar objective (sum over rows).
Var fusion_loss(const Var& z, const ObservationSet& observations, const mvae::MvaeModel& model,
                std::span<const Sampler> samplers, double prior_weight, std::span<const double> weights);

/// Plain evaluation of the objective at a single latent.
double fusion_objective(std::span<const double> z, const ObservationSet& observations,
                        const mvae::MvaeModel& model, std::span<const Sampler> samplers,
                        double prior_weight, std::span<const double> weights);

/// MAP estimate of z by alternating per-modality gradient steps from
/// several prior-sampled starting points. The winner is the restart with the
/// lowest final objective.
FusionResult sflr_fuse(const ObservationSet& observations, const mvae::MvaeModel& model,
                       std::span<const Sampler> samplers, const FusionConfig& config, Rng& rng);

/// One modality's evidence for the asymmetric wrapper.
struct ModalityEvidence {
    std::size_t modality = 0;
    std::vector<double> y;
};

struct AsymmetricResult {
    FusionResult fusion;
    /// Per-modality reconstruction MSE against `truths` (empty when not given).
    std::vector<double> recon_mse;
};

/// Fusion of a weak (subsampled, noisy) modality optionally aided by a
/// strong modality observed in full through an identity, noiseless sampler.
AsymmetricResult asymmetric_fuse(const ModalityEvidence& weak, const std::optional<ModalityEvidence>& strong,
                                 const mvae::MvaeModel& model, std::span<const Sampler> samplers,
                                 const FusionConfig& config, Rng& rng,
                                 std::span<const std::vector<double>> truths = {});

struct SampleRecord {
    std::size_t sample_id = 0;
    std::size_t modality = 0;  // 1-based in CSV output
    std::size_t n_measurements = 0;
    double noise_std = 0.0;
    double recon_mse = 0.0;
    double final_loss = 0.0;
    int restarts = 0;
    int iterations = 0;
};

struct ModalitySummary {
    std::size_t modality = 0;
    double mean_recon_mse = 0.0;
    double var_recon_mse = 0.0;
};

struct BatchFuseResult {
    std::vector<std::size_t> sample_ids;
    std::vector<FusionResult> results;
    std::vector<SampleRecord> records;  // one per (sample, modality), sorted
    std::vector<ModalitySummary> summary;
};

struct BatchFuseOptions {
    /// Which modalities are observed; empty means all.
    std::vector<bool> observe;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

/// Generates observations y_m = chi_m(x_m) + noise for each sample, fuses
/// them, and scores reconstructions of every modality against the truth.
BatchFuseResult batch_fuse(const protein::ProteinDataset& data, std::span<const std::size_t> rows,
                           const mvae::MvaeModel& model, std::span<const Sampler> samplers,
                           const FusionConfig& config, const BatchFuseOptions& options);

/// Measurements actually carrying information: projection rows, unmasked
/// entries, or N for identity.
std::size_t effective_measurements(const Sampler& sampler);

/// Summary CSV: sample_id, modality, n_measurements, noise_std, recon_mse,
/// final_loss, restarts, iterations.
void write_records_csv(const std::filesystem::path& path, std::span<const SampleRecord> records);
std::vector<SampleRecord> read_records_csv(const std::filesystem::path& path);

}  // namespace latentfuse::fusion
