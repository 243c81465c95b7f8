#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "latentfuse/numkit/rng.hpp"
#include "latentfuse/numkit/tensor.hpp"

namespace latentfuse::protein {

using numkit::Rng;
using numkit::Tensor;

/// Ground-truth latent prior: an equally weighted Gaussian mixture with
/// isotropic components.
struct GmmPrior {
    Tensor means;  // n_components x latent_dim
    double component_std = 0.5;
    std::vector<double> weights;

    std::size_t n_components() const { return means.rows(); }
    std::size_t latent_dim() const { return means.cols(); }
};

struct PriorOptions {
    std::size_t n_components = 10;
    std::size_t latent_dim = 4;
    double spread = 2.0;
    double component_std = 0.5;
    /// Means are redrawn until every pair is more than 2 * component_std
    /// apart, at most this many times.
    int max_redraws = 100;
};

GmmPrior build_prior(Rng& rng, const PriorOptions& options = {});
double min_pairwise_distance(const GmmPrior& prior);

/// One modality's generator x = tanh(W z + b).
struct ModalityGenerator {
    Tensor weight;  // signal_dim x latent_dim
    Tensor bias;    // signal_dim x 1

    std::vector<double> apply(std::span<const double> z) const;
};

struct GeneratorOptions {
    std::size_t signal_dim = 32;
    std::size_t n_modalities = 2;
    double weight_std = 0.5;
    double bias_std = 0.1;
};

struct TrueGenerator {
    std::vector<ModalityGenerator> modalities;

    std::size_t n_modalities() const { return modalities.size(); }
    std::size_t signal_dim() const { return modalities.at(0).weight.rows(); }
    std::size_t latent_dim() const { return modalities.at(0).weight.cols(); }
};

TrueGenerator build_generator(Rng& rng, std::size_t latent_dim, const GeneratorOptions& options = {});

enum class Split : std::uint8_t { train = 0, test = 1 };

/// Column-oriented multimodal dataset; row i of every table is sample i.
struct ProteinDataset {
    std::vector<Split> splits;
    std::vector<int> labels;
    Tensor z_true;               // n x latent_dim
    std::vector<Tensor> signals;  // per modality, n x signal_dim

    std::size_t size() const { return labels.size(); }
    std::size_t n_modalities() const { return signals.size(); }
    std::size_t signal_dim() const { return signals.empty() ? 0 : signals[0].cols(); }
    std::size_t latent_dim() const { return z_true.cols(); }

    std::vector<std::size_t> indices(Split split) const;
    /// Rows `rows` of modality m as a |rows| x signal_dim matrix.
    Tensor gather(std::size_t modality, std::span<const std::size_t> rows) const;
    Tensor gather_latent(std::span<const std::size_t> rows) const;

    bool operator==(const ProteinDataset&) const = default;
};

/// Draws `n_samples` records: component k from the mixture weights,
/// z ~ N(mean_k, std^2 I), x_m = generator_m(z), label = k. The first
/// n - floor(n/5) records are the training split.
ProteinDataset sample_dataset(const GmmPrior& prior, const TrueGenerator& generator,
                              std::size_t n_samples, Rng& rng);

/// Pairs consecutive coordinates into 2D polyline vertices.
std::vector<std::array<double, 2>> render_protein(std::span<const double> x);

class DatasetFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

/// Binary container (little-endian):
///   "LFDS" | u32 version | u32 n | u32 signal_dim | u32 latent_dim | u32 n_modalities
///   | u8 split[n] | i32 label[n] | f64 z[n*latent_dim] | f64 x_m[n*signal_dim] per modality
void save_binary(const ProteinDataset& data, const std::filesystem::path& path);
ProteinDataset load_binary(const std::filesystem::path& path);

/// CSV with columns sample_id, split, label, z0.., x1_0.., x2_0.. and
/// round-trip (17 significant digit) values.
void save_csv(const ProteinDataset& data, const std::filesystem::path& path);
ProteinDataset load_csv(const std::filesystem::path& path);

/// Dispatches on extension: ".csv" is CSV, anything else binary.
void save_dataset(const ProteinDataset& data, const std::filesystem::path& path);
ProteinDataset load_dataset(const std::filesystem::path& path);

}  // namespace latentfuse::protein
