#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentfuse/fusion/fusion.hpp"
#include "latentfuse/mvae/model.hpp"
#include "latentfuse/numkit/dense.hpp"
#include "latentfuse/protein/protein.hpp"

namespace latentfuse::eval {

using numkit::Rng;
using numkit::Tensor;
using numkit::Var;

struct LabeledLatent {
    std::vector<double> z;
    int label = 0;
};

/// Majority vote among the k nearest support points (Euclidean). Ties go to
/// the smallest mean distance among the tied labels, then the lowest label.
int knn_classify(std::span<const double> query, std::span<const LabeledLatent> support, std::size_t k);

std::vector<int> knn_classify_all(std::span<const std::vector<double>> queries,
                                  std::span<const LabeledLatent> support, std::size_t k);

enum class BaselineKind { single_modality_1, single_modality_2, probability_fusion, dual_branch };

std::string to_string(BaselineKind kind);
BaselineKind baseline_kind_from_string(const std::string& name);

struct BaselineConfig {
    int epochs = 200;
    double learning_rate = 1e-3;
    double weight_decay = 1e-3;
    std::size_t hidden = 16;
    int n_classes = 10;
};

/// Supervised comparison classifier. Each branch is an N -> hidden tanh
/// trunk (the encoder's first layer) followed by a linear head.
class BaselineModel {
public:
    static BaselineModel create(BaselineKind kind, std::size_t signal_dim, const BaselineConfig& config, Rng& rng);

    BaselineKind kind() const { return kind_; }

    /// Full-batch Adam on cross-entropy. `signals` holds one matrix per
    /// modality (rows aligned with `labels`). Returns the final loss.
    double fit(std::span<const Tensor> signals, std::span<const int> labels);

    /// Class probabilities, one row per sample.
    Tensor predict_proba(std::span<const Tensor> signals) const;
    std::vector<int> predict(std::span<const Tensor> signals) const;

    /// Per-branch softmax outputs (probability fusion has two, others one).
    std::vector<Tensor> branch_proba(std::span<const Tensor> signals) const;

private:
    BaselineKind kind_ = BaselineKind::single_modality_1;
    BaselineConfig config_;
    std::vector<numkit::Dense> trunks_;
    std::vector<numkit::Dense> heads_;

    std::vector<Tensor*> parameters();
};

/// Elementwise product of probability rows, renormalised per row.
Tensor product_rule(const Tensor& a, const Tensor& b);

std::vector<int> argmax_rows(const Tensor& probabilities);

enum class EmbeddingPath { posterior_mean, fusion };

struct FewShotConfig {
    std::vector<int> shots{1, 5, 10};
    int n_seeds = 5;
    std::uint64_t seed = 1;
    /// Any of "sflr" and the baseline names.
    std::vector<std::string> methods{"single_modality_1", "single_modality_2", "probability_fusion",
                                     "dual_branch", "sflr"};
    BaselineConfig baseline;
    EmbeddingPath embedding = EmbeddingPath::posterior_mean;
    /// Fusion path only.
    std::vector<samplers::SamplerSpec> sampler_specs;
    fusion::FusionConfig fusion;
    /// Caps the number of test queries (0 = whole test split), taken in order.
    std::size_t max_queries = 0;
    unsigned threads = 1;
};

struct FewShotRow {
    std::string method;
    int shots = 0;
    int seed = 0;
    double f1_macro = 0.0;
};

/// `shots` distinct training rows per class, chosen by `rng`.
std::vector<std::size_t> draw_support(const protein::ProteinDataset& data, int shots, int n_classes, Rng& rng);

/// Latent embeddings of dataset rows along the configured path.
std::vector<std::vector<double>> embed_rows(const mvae::MvaeModel& model, const protein::ProteinDataset& data,
                                            std::span<const std::size_t> rows, const FewShotConfig& config);

/// One row per (method, shots, seed), sorted by method order, then shots, then seed.
std::vector<FewShotRow> fewshot_protocol(const mvae::MvaeModel& model, const protein::ProteinDataset& data,
                                         const FewShotConfig& config);

/// Mean F1 over seeds for each (method, shots), seed field set to -1.
std::vector<FewShotRow> summarize(std::span<const FewShotRow> rows);

void write_fewshot_csv(const std::filesystem::path& path, std::span<const FewShotRow> rows);
std::vector<FewShotRow> read_fewshot_csv(const std::filesystem::path& path);

}  // namespace latentfuse::eval
