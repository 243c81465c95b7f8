#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latentfuse/mvae/gaussian.hpp"
#include "latentfuse/numkit/dense.hpp"
#include "latentfuse/numkit/optim.hpp"
#include "latentfuse/protein/protein.hpp"

namespace latentfuse::mvae {

using numkit::Tape;

enum class PosteriorMode { joint, poe, moe };

std::string to_string(PosteriorMode mode);
PosteriorMode posterior_mode_from_string(const std::string& name);

/// Raised when a posterior is requested without a modality the model needs.
class MissingModalityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Two-layer perceptron: in -> hidden (tanh) -> out (linear).
struct Mlp {
    numkit::Dense hidden;
    numkit::Dense output;

    Mlp() = default;
    Mlp(std::size_t in, std::size_t width, std::size_t out) : hidden(in, width), output(width, out) {}

    void init(Rng& rng) {
        hidden.init(rng);
        output.init(rng);
    }
    Var forward(const Var& x, bool trainable = true);
    Var forward_frozen(const Var& x) const;
    /// Hidden-layer activations only.
    Var embed(const Var& x, bool trainable = true);
    void collect(std::vector<Tensor*>& out) {
        hidden.collect(out);
        output.collect(out);
    }
};

struct ModelShape {
    std::size_t n_modalities = 2;
    std::size_t signal_dim = 32;
    std::size_t latent_dim = 4;
    std::size_t hidden = 16;

    bool operator==(const ModelShape&) const = default;
};

/// Per-modality views of one batch; an absent modality has no rows.
struct Batch {
    std::vector<Tensor> signals;
    std::vector<bool> present;

    std::size_t rows() const;
    std::size_t n_modalities() const { return signals.size(); }
};

Batch make_batch(const protein::ProteinDataset& data, std::span<const std::size_t> rows);

/// Multimodal VAE. Joint mode owns one encoder over the concatenated
/// modalities; PoE and MoE modes own one encoder per modality. Decoders are
/// deterministic and per modality in every mode.
class MvaeModel {
public:
    MvaeModel() = default;
    static MvaeModel create(const ModelShape& shape, PosteriorMode mode, Rng& rng);

    const ModelShape& shape() const { return shape_; }
    PosteriorMode mode() const { return mode_; }

    std::vector<Tensor*> parameters();
    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
    std::size_t parameter_count() const;

    /// Unimodal expert q(z | x_m). Not available in joint mode.
    GaussianLatent encode(std::span<const double> x, std::size_t modality) const;
    /// Joint-encoder posterior; requires every modality.
    GaussianLatent encode_joint(std::span<const std::span<const double>> xs) const;
    /// Posterior over z per the model's mode. `xs[m]` empty marks modality m
    /// as missing. Joint mode rejects missing modalities; MoE has no
    /// Gaussian posterior (combine `experts()` with moe_combine instead).
    GaussianLatent posterior(std::span<const std::span<const double>> xs) const;
    /// Point embedding: posterior mean (MoE: mean of the mixture).
    std::vector<double> posterior_mean(std::span<const std::span<const double>> xs) const;
    std::vector<GaussianLatent> experts(std::span<const std::span<const double>> xs) const;

    std::vector<double> decode(std::span<const double> z, std::size_t modality) const;

    // Recorded forward passes; `trainable` controls gradient flow to weights.
    LatentVars encode_vars(const Var& x, std::size_t modality, bool trainable = true);
    LatentVars encode_joint_vars(std::span<const Var> xs, bool trainable = true);
    Var decode_var(const Var& z, std::size_t modality, bool trainable = true);
    Var decode_frozen(const Var& z, std::size_t modality) const;

    Mlp& encoder(std::size_t m) { return encoders_.at(m); }
    Mlp& joint_encoder() { return joint_encoder_; }
    Mlp& decoder(std::size_t m) { return decoders_.at(m); }

private:
    ModelShape shape_;
    PosteriorMode mode_ = PosteriorMode::joint;
    std::vector<Mlp> encoders_;
    Mlp joint_encoder_;
    std::vector<Mlp> decoders_;
};

/// Standard-normal noise consumed by one ELBO evaluation: one rows x d
/// matrix for joint/PoE, one per present expert for MoE.
using ElboNoise = std::vector<Tensor>;

ElboNoise draw_elbo_noise(const MvaeModel& model, const Batch& batch, Rng& rng);

/// Batch-mean of sum_m ||x_m - decoder_m(z)||^2 + beta * KL(q || N(0, I)),
/// with z drawn by the pathwise estimator from the mode's posterior. MoE uses
/// the stratified average over present experts. The batch is referenced by
/// the tape and must stay alive until backward().
Var elbo_loss(Tape& tape, MvaeModel& model, const Batch& batch, const ElboNoise& noise, double beta);
Var elbo_loss(Tape& tape, MvaeModel& model, const Batch& batch, Rng& rng, double beta);

struct TrainConfig {
    int epochs = 200;
    std::size_t batch_size = 64;
    double learning_rate = 2e-3;
    double kl_scale = 0.1;
    std::uint64_t seed = 1;
    PosteriorMode posterior_mode = PosteriorMode::joint;
    double modality_dropout_prob = 0.5;
    double grad_clip = 10.0;
};

/// Optimizer state carried across resumed runs.
struct TrainState {
    numkit::OptimState optim;
    int epochs_done = 0;
};

struct TrainResult {
    std::vector<double> epoch_loss;
    TrainState state;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Minibatch Adam on the ELBO over the training split. Passing a previous
/// state resumes its step counter and moments.
TrainResult train(MvaeModel& model, const protein::ProteinDataset& data, const TrainConfig& config,
                  std::optional<TrainState> resume = std::nullopt);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    MvaeModel model;
    TrainConfig config;
    TrainState state;
};

void save_model(const std::filesystem::path& path, const MvaeModel& model, const TrainConfig& config,
                const TrainState& state = {});
Checkpoint load_model(const std::filesystem::path& path);

}  // namespace latentfuse::mvae
