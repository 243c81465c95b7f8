#include "latentfuse/protein/protein.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace latentfuse::protein {

namespace {

void draw_means(Rng& rng, const PriorOptions& options, Tensor& means) {
    for (double& v : means.data()) v = rng.normal(0.0, options.spread);
}

}  // namespace

GmmPrior build_prior(Rng& rng, const PriorOptions& options) {
    if (!(options.spread >= 0.0)) throw std::invalid_argument("prior spread must be non-negative");
    if (!(options.component_std > 0.0)) throw std::invalid_argument("component std must be positive");
    if (options.n_components == 0 || options.latent_dim == 0) {
        throw std::invalid_argument("prior needs at least one component and one dimension");
    }
    GmmPrior prior;
    prior.component_std = options.component_std;
    prior.means = Tensor(options.n_components, options.latent_dim);
    prior.weights.assign(options.n_components, 1.0 / static_cast<double>(options.n_components));

    draw_means(rng, options, prior.means);
    // A zero spread is a legal degenerate prior; there is nothing to redraw.
    if (options.spread > 0.0) {
        for (int attempt = 0; attempt < options.max_redraws; ++attempt) {
            if (min_pairwise_distance(prior) > 2.0 * prior.component_std) break;
            draw_means(rng, options, prior.means);
        }
    }
    return prior;
}

double min_pairwise_distance(const GmmPrior& prior) {
    double best = std::numeric_limits<double>::infinity();
    const auto& m = prior.means;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.rows(); ++j) {
            double sq = 0.0;
            for (std::size_t c = 0; c < m.cols(); ++c) sq += (m(i, c) - m(j, c)) * (m(i, c) - m(j, c));
            best = std::min(best, std::sqrt(sq));
        }
    return best;
}

std::vector<double> ModalityGenerator::apply(std::span<const double> z) const {
    if (z.size() != weight.cols()) throw numkit::ShapeError("generator latent size mismatch");
    std::vector<double> x(weight.rows());
    for (std::size_t i = 0; i < weight.rows(); ++i) {
        double s = bias[i];
        for (std::size_t j = 0; j < z.size(); ++j) s += weight(i, j) * z[j];
        x[i] = std::tanh(s);
    }
    return x;
}

TrueGenerator build_generator(Rng& rng, std::size_t latent_dim, const GeneratorOptions& options) {
    if (options.signal_dim == 0 || options.n_modalities == 0 || latent_dim == 0) {
        throw std::invalid_argument("generator dimensions must be positive");
    }
    TrueGenerator gen;
    for (std::size_t m = 0; m < options.n_modalities; ++m) {
        ModalityGenerator g;
        g.weight = numkit::rng_gaussian(rng, options.signal_dim, latent_dim, 0.0, options.weight_std);
        g.bias = numkit::rng_gaussian(rng, options.signal_dim, 1, 0.0, options.bias_std);
        gen.modalities.push_back(std::move(g));
    }
    return gen;
}

std::vector<std::size_t> ProteinDataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == split) out.push_back(i);
    return out;
}

Tensor ProteinDataset::gather(std::size_t modality, std::span<const std::size_t> rows) const {
    const Tensor& src = signals.at(modality);
    Tensor out(rows.size(), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto s = src.row_span(rows[i]);
        std::copy(s.begin(), s.end(), out.row_span(i).begin());
    }
    return out;
}

Tensor ProteinDataset::gather_latent(std::span<const std::size_t> rows) const {
    Tensor out(rows.size(), z_true.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto s = z_true.row_span(rows[i]);
        std::copy(s.begin(), s.end(), out.row_span(i).begin());
    }
    return out;
}

ProteinDataset sample_dataset(const GmmPrior& prior, const TrueGenerator& generator,
                              std::size_t n_samples, Rng& rng) {
    if (generator.latent_dim() != prior.latent_dim()) {
        throw numkit::ShapeError("generator and prior latent dimensions differ");
    }
    const std::size_t d = prior.latent_dim();
    const std::size_t n_dim = generator.signal_dim();
    ProteinDataset data;
    data.z_true = Tensor(n_samples, d);
    data.labels.resize(n_samples);
    data.splits.resize(n_samples);
    for (std::size_t m = 0; m < generator.n_modalities(); ++m) data.signals.emplace_back(n_samples, n_dim);

    const std::size_t n_train = n_samples - n_samples / 5;
    for (std::size_t i = 0; i < n_samples; ++i) {
        double u = rng.uniform();
        std::size_t k = 0;
        while (k + 1 < prior.weights.size() && u >= prior.weights[k]) {
            u -= prior.weights[k];
            ++k;
        }
        auto z = data.z_true.row_span(i);
        for (std::size_t c = 0; c < d; ++c) z[c] = rng.normal(prior.means(k, c), prior.component_std);
        for (std::size_t m = 0; m < generator.n_modalities(); ++m) {
            const auto x = generator.modalities[m].apply(z);
            std::copy(x.begin(), x.end(), data.signals[m].row_span(i).begin());
        }
        data.labels[i] = static_cast<int>(k);
        data.splits[i] = i < n_train ? Split::train : Split::test;
    }
    return data;
}

std::vector<std::array<double, 2>> render_protein(std::span<const double> x) {
    if (x.size() % 2 != 0) throw std::invalid_argument("render_protein needs an even signal length");
    std::vector<std::array<double, 2>> points;
    points.reserve(x.size() / 2);
    for (std::size_t i = 0; i < x.size(); i += 2) points.push_back({x[i], x[i + 1]});
    return points;
}

}  // namespace latentfuse::protein
