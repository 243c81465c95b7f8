#include "latentfuse/samplers/samplers.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace latentfuse::samplers {

std::string to_string(SamplerKind kind) {
    switch (kind) {
        case SamplerKind::random_projection: return "random_projection";
        case SamplerKind::mask: return "mask";
        case SamplerKind::identity: return "identity";
    }
    return "?";
}

SamplerKind sampler_kind_from_string(const std::string& name) {
    if (name == "random_projection" || name == "projection") return SamplerKind::random_projection;
    if (name == "mask") return SamplerKind::mask;
    if (name == "identity") return SamplerKind::identity;
    throw std::invalid_argument("unknown sampler kind '" + name + "'");
}

void SamplerSpec::validate(std::size_t signal_dim) const {
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
        throw std::invalid_argument("sampler noise_std must be a finite non-negative number");
    }
    if (kind == SamplerKind::random_projection &&
        (n_measurements < 1 || n_measurements > signal_dim)) {
        throw std::invalid_argument("n_measurements must be in [1, " + std::to_string(signal_dim) +
                                    "], got " + std::to_string(n_measurements));
    }
    if (kind == SamplerKind::mask && !(missing_ratio >= 0.0 && missing_ratio <= 1.0)) {
        throw std::invalid_argument("missing_ratio must be in [0, 1]");
    }
}

Sampler Sampler::build(const SamplerSpec& spec, std::size_t signal_dim, Rng& rng) {
    spec.validate(signal_dim);
    Sampler s;
    s.spec_ = spec;
    switch (spec.kind) {
        case SamplerKind::random_projection:
            s.matrix_ = numkit::rng_gaussian(rng, spec.n_measurements, signal_dim, 0.0,
                                             1.0 / std::sqrt(static_cast<double>(signal_dim)));
            break;
        case SamplerKind::mask: {
            const auto n_missing = static_cast<std::size_t>(
                std::ceil(spec.missing_ratio * static_cast<double>(signal_dim) - 1e-9));
            std::vector<std::size_t> order(signal_dim);
            std::iota(order.begin(), order.end(), 0);
            // Partial Fisher-Yates picks the missing positions.
            for (std::size_t i = 0; i < n_missing; ++i) {
                const std::size_t j = i + rng.uniform_index(signal_dim - i);
                std::swap(order[i], order[j]);
            }
            s.matrix_ = Tensor::identity(signal_dim);
            for (std::size_t i = 0; i < n_missing; ++i) s.matrix_(order[i], order[i]) = 0.0;
            break;
        }
        case SamplerKind::identity:
            s.matrix_ = Tensor::identity(signal_dim);
            break;
    }
    s.transposed_ = numkit::transpose(s.matrix_);
    return s;
}

Sampler Sampler::build(const SamplerSpec& spec, std::size_t signal_dim) {
    Rng rng(spec.seed, 0x5a4d504c);
    return build(spec, signal_dim, rng);
}

std::vector<double> Sampler::measure(std::span<const double> x) const {
    if (x.size() != signal_dim()) throw numkit::ShapeError("sampler input length mismatch");
    std::vector<double> y(output_dim(), 0.0);
    for (std::size_t i = 0; i < output_dim(); ++i) y[i] = numkit::dot(matrix_.row_span(i), x);
    return y;
}

Tensor Sampler::measure_rows(const Tensor& signals) const { return numkit::matmul(signals, transposed_); }

Var Sampler::measure(const Var& signals) const {
    if (spec_.kind == SamplerKind::identity) return signals;
    return numkit::matmul(signals, signals.tape()->constant_ref(transposed_));
}

Observation Sampler::apply(std::span<const double> x, Rng& noise_rng, std::size_t sample_id) const {
    Observation obs{measure(x), spec_, sample_id};
    if (spec_.noise_std > 0.0)
        for (double& v : obs.y) v += noise_rng.normal(0.0, spec_.noise_std);
    return obs;
}

double lipschitz_check(const Sampler& sampler, std::size_t n_trials, Rng& rng) {
    const std::size_t n = sampler.signal_dim();
    double best = 0.0;
    for (std::size_t t = 0; t < n_trials; ++t) {
        std::vector<double> a(n), b(n), diff(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal();
            diff[i] = a[i] - b[i];
        }
        const auto ya = sampler.measure(a);
        const auto yb = sampler.measure(b);
        std::vector<double> dy(ya.size());
        for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = ya[i] - yb[i];
        const double denom = numkit::norm2(diff);
        if (denom > 0.0) best = std::max(best, numkit::norm2(dy) / denom);
    }
    return best;
}

double spectral_norm(const Tensor& a, int iterations) {
    const Tensor at = numkit::transpose(a);
    const Tensor ata = numkit::matmul(at, a);
    const std::size_t n = ata.rows();
    if (n == 0) return 0.0;
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    // Deterministic but non-degenerate start.
    for (std::size_t i = 0; i < n; ++i) v[i] += 1e-3 * static_cast<double>(i % 7);
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> w(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) w[i] = numkit::dot(ata.row_span(i), v);
        const double nw = numkit::norm2(w);
        if (nw == 0.0) return 0.0;
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / nw;
        lambda = nw;
    }
    return std::sqrt(lambda);
}

std::string measurement_percent(std::size_t n_measurements, std::size_t signal_dim) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%zu (%g%%)", n_measurements,
                  100.0 * static_cast<double>(n_measurements) / static_cast<double>(signal_dim));
    return buf;
}

}  // namespace latentfuse::samplers
