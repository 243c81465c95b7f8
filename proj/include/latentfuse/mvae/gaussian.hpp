#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latentfuse/numkit/autodiff.hpp"
#include "latentfuse/numkit/rng.hpp"

namespace latentfuse::mvae {

using numkit::Rng;
using numkit::Tensor;
using numkit::Var;

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// Diagonal Gaussian over the latent space.
struct GaussianLatent {
    std::vector<double> mean;
    std::vector<double> logvar;

    static GaussianLatent standard(std::size_t dim);

    std::size_t dim() const { return mean.size(); }
    double variance(std::size_t i) const;
    double precision(std::size_t i) const;
    double log_density(std::span<const double> z) const;
    /// Clamps logvar into [kLogvarMin, kLogvarMax]; idempotent.
    void clamp();
};

/// Precision-weighted product of diagonal Gaussian experts, optionally with
/// the standard normal prior expert. A missing modality is simply absent
/// from the list. Zero experts with the prior gives N(0, I).
GaussianLatent poe_combine(std::span<const GaussianLatent> experts, bool include_prior,
                           std::size_t dim);

/// Uniform mixture over the present experts.
class MixtureOfExperts {
public:
    explicit MixtureOfExperts(std::vector<GaussianLatent> experts);

    const std::vector<GaussianLatent>& experts() const { return experts_; }
    std::vector<double> sample(Rng& rng) const;
    /// log of the mean of the component densities (log-mean-exp).
    double log_density(std::span<const double> z) const;
    std::vector<double> mean() const;

private:
    std::vector<GaussianLatent> experts_;
};

MixtureOfExperts moe_combine(std::span<const GaussianLatent> experts);

/// z = mean + exp(logvar / 2) * eps, eps ~ N(0, I).
std::vector<double> reparam_sample(const GaussianLatent& q, Rng& rng);

/// Closed-form KL(q || N(0, I)).
double kl_standard_normal(const GaussianLatent& q);

/// Batched, recorded Gaussian: one latent per row.
struct LatentVars {
    Var mean;
    Var logvar;
};

/// Recorded product of experts; output logvar is clamped.
LatentVars poe_combine(std::span<const LatentVars> experts, bool include_prior);
/// Pathwise sample with externally supplied standard-normal noise.
Var reparam_sample(const LatentVars& q, const Tensor& eps);
/// Per-row KL to N(0, I), Rx1.
Var kl_standard_normal(const LatentVars& q);

}  // namespace latentfuse::mvae
