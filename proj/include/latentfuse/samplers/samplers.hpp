#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentfuse/numkit/autodiff.hpp"
#include "latentfuse/numkit/rng.hpp"

namespace latentfuse::samplers {

using numkit::Rng;
using numkit::Tensor;
using numkit::Var;

enum class SamplerKind { random_projection, mask, identity };

std::string to_string(SamplerKind kind);
SamplerKind sampler_kind_from_string(const std::string& name);

/// Description of a measurement operator. `n_measurements` is used by the
/// projection kind and `missing_ratio` by the mask kind.
struct SamplerSpec {
    SamplerKind kind = SamplerKind::identity;
    std::size_t n_measurements = 0;
    double missing_ratio = 0.0;
    double noise_std = 0.0;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument for settings impossible on a length-N signal.
    void validate(std::size_t signal_dim) const;
    bool operator==(const SamplerSpec&) const = default;
};

struct Observation {
    std::vector<double> y;
    SamplerSpec spec;
    std::size_t sample_id = 0;
};

/// Linear measurement operator y = A x (+ noise when generating data).
/// Immutable once built.
class Sampler {
public:
    /// Operator matrix drawn from `rng`: projection entries ~ N(0, 1/N),
    /// mask is diag(0/1) with ceil(ratio * N) zeros, identity is I_N.
    static Sampler build(const SamplerSpec& spec, std::size_t signal_dim, Rng& rng);
    /// Same as above with the operator stream derived from spec.seed.
    static Sampler build(const SamplerSpec& spec, std::size_t signal_dim);

    const SamplerSpec& spec() const { return spec_; }
    const Tensor& matrix() const { return matrix_; }
    std::size_t signal_dim() const { return matrix_.cols(); }
    std::size_t output_dim() const { return matrix_.rows(); }

    /// Noiseless A x.
    std::vector<double> measure(std::span<const double> x) const;
    /// Noiseless measurement of every row of X (rows are signals).
    Tensor measure_rows(const Tensor& signals) const;
    /// Differentiable measurement of the rows of `signals`.
    Var measure(const Var& signals) const;

    /// Observation y = A x + noise_std * eps with eps drawn from `noise_rng`.
    Observation apply(std::span<const double> x, Rng& noise_rng, std::size_t sample_id = 0) const;

private:
    SamplerSpec spec_;
    Tensor matrix_;      // output_dim x signal_dim
    Tensor transposed_;  // signal_dim x output_dim
};

/// Largest observed ratio ||A a - A b|| / ||a - b|| over random pairs.
double lipschitz_check(const Sampler& sampler, std::size_t n_trials, Rng& rng);

/// Largest singular value by power iteration on A^T A.
double spectral_norm(const Tensor& a, int iterations = 500);

/// "n (p%)" bookkeeping used in result tables, e.g. 1 of 32 -> "1 (3.125%)".
std::string measurement_percent(std::size_t n_measurements, std::size_t signal_dim);

}  // namespace latentfuse::samplers
