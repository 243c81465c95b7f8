#include "latentfuse/mvae/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace latentfuse::mvae {

namespace nk = latentfuse::numkit;

GaussianLatent GaussianLatent::standard(std::size_t dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
}

double GaussianLatent::variance(std::size_t i) const { return std::exp(logvar[i]); }
double GaussianLatent::precision(std::size_t i) const { return std::exp(-logvar[i]); }

double GaussianLatent::log_density(std::span<const double> z) const {
    if (z.size() != dim()) throw nk::ShapeError("log_density dimension mismatch");
    double lp = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) {
        const double d = z[i] - mean[i];
        lp += -0.5 * (std::log(2.0 * std::numbers::pi) + logvar[i] + d * d / variance(i));
    }
    return lp;
}

void GaussianLatent::clamp() {
    for (double& v : logvar) v = std::clamp(v, kLogvarMin, kLogvarMax);
}

GaussianLatent poe_combine(std::span<const GaussianLatent> experts, bool include_prior,
                           std::size_t dim) {
    if (experts.empty() && !include_prior) {
        throw std::invalid_argument("product of zero experts without prior is improper");
    }
    GaussianLatent out;
    out.mean.assign(dim, 0.0);
    out.logvar.assign(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
        double precision = include_prior ? 1.0 : 0.0;
        double weighted = 0.0;
        for (const auto& e : experts) {
            if (e.dim() != dim) throw nk::ShapeError("expert dimension mismatch");
            const double t = e.precision(i);
            precision += t;
            weighted += t * e.mean[i];
        }
        out.mean[i] = weighted / precision;
        out.logvar[i] = -std::log(precision);
    }
    out.clamp();
    return out;
}

MixtureOfExperts::MixtureOfExperts(std::vector<GaussianLatent> experts) : experts_(std::move(experts)) {
    if (experts_.empty()) throw std::invalid_argument("mixture of experts needs a present expert");
}

std::vector<double> MixtureOfExperts::sample(Rng& rng) const {
    const auto& e = experts_[rng.uniform_index(experts_.size())];
    return reparam_sample(e, rng);
}

double MixtureOfExperts::log_density(std::span<const double> z) const {
    std::vector<double> lps;
    for (const auto& e : experts_) lps.push_back(e.log_density(z));
    const double mx = *std::max_element(lps.begin(), lps.end());
    double s = 0.0;
    for (double lp : lps) s += std::exp(lp - mx);
    return mx + std::log(s / static_cast<double>(lps.size()));
}

std::vector<double> MixtureOfExperts::mean() const {
    std::vector<double> m(experts_[0].dim(), 0.0);
    for (const auto& e : experts_)
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += e.mean[i] / static_cast<double>(experts_.size());
    return m;
}

MixtureOfExperts moe_combine(std::span<const GaussianLatent> experts) {
    return MixtureOfExperts(std::vector<GaussianLatent>(experts.begin(), experts.end()));
}

std::vector<double> reparam_sample(const GaussianLatent& q, Rng& rng) {
    std::vector<double> z(q.dim());
    for (std::size_t i = 0; i < q.dim(); ++i) z[i] = q.mean[i] + std::exp(0.5 * q.logvar[i]) * rng.normal();
    return z;
}

double kl_standard_normal(const GaussianLatent& q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < q.dim(); ++i) {
        kl += 0.5 * (q.mean[i] * q.mean[i] + std::exp(q.logvar[i]) - 1.0 - q.logvar[i]);
    }
    return kl;
}

LatentVars poe_combine(std::span<const LatentVars> experts, bool include_prior) {
    if (experts.empty()) throw std::invalid_argument("recorded product needs at least one expert");
    Var precision;
    Var weighted;
    for (const auto& e : experts) {
        Var t = nk::exp(nk::scale(e.logvar, -1.0));
        Var tm = nk::mul(t, e.mean);
        precision = precision.valid() ? nk::add(precision, t) : t;
        weighted = weighted.valid() ? nk::add(weighted, tm) : tm;
    }
    if (include_prior) precision = nk::add_scalar(precision, 1.0);
    return {nk::div(weighted, precision),
            nk::clamp(nk::scale(nk::log(precision), -1.0), kLogvarMin, kLogvarMax)};
}

Var reparam_sample(const LatentVars& q, const Tensor& eps) {
    Var noise = q.mean.tape()->constant(eps);
    return nk::add(q.mean, nk::mul(nk::exp(nk::scale(q.logvar, 0.5)), noise));
}

Var kl_standard_normal(const LatentVars& q) {
    // 0.5 * (mu^2 + exp(logvar) - 1 - logvar), summed over latent dims.
    Var terms = nk::sub(nk::add(nk::square(q.mean), nk::exp(q.logvar)), nk::add_scalar(q.logvar, 1.0));
    return nk::scale(nk::row_sum(terms), 0.5);
}

}  // namespace latentfuse::mvae
