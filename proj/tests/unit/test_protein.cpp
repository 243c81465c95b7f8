#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "latentfuse/protein/protein.hpp"
#include "support.hpp"

namespace pr = latentfuse::protein;
using latentfuse::numkit::Rng;
using latentfuse::numkit::Tensor;

namespace {

pr::ProteinDataset make(std::size_t n, std::uint64_t seed = 1) {
    Rng rng(seed, 0);
    const auto prior = pr::build_prior(rng);
    const auto gen = pr::build_generator(rng, prior.latent_dim());
    return pr::sample_dataset(prior, gen, n, rng);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("build_prior") {
    SUBCASE("zero spread puts every mean at the origin") {
        Rng rng(3, 0);
        pr::PriorOptions o;
        o.spread = 0.0;
        const auto prior = pr::build_prior(rng, o);
        for (double v : prior.means.storage()) CHECK(v == 0.0);
    }
    SUBCASE("weights form a simplex and the shape is 10 x 4") {
        Rng rng(3, 0);
        const auto prior = pr::build_prior(rng);
        CHECK(prior.n_components() == 10);
        CHECK(prior.latent_dim() == 4);
        double s = 0.0;
        for (double w : prior.weights) s += w;
        CHECK(std::abs(s - 1.0) <= 1e-12);
        CHECK(prior.component_std == 0.5);
    }
    SUBCASE("default options separate the means in at least 95% of seeds") {
        pr::PriorOptions raw;
        raw.max_redraws = 0;
        int separated = 0, separated_raw = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed, 0), rng_raw(seed, 0);
            const auto prior = pr::build_prior(rng);
            const auto first = pr::build_prior(rng_raw, raw);
            if (pr::min_pairwise_distance(prior) > 2.0 * prior.component_std) ++separated;
            if (pr::min_pairwise_distance(first) > 2.0 * first.component_std) ++separated_raw;
        }
        MESSAGE("separated on the first draw: " << separated_raw << "/100, after redraws: " << separated << "/100");
        CHECK(separated >= 95);
    }
    SUBCASE("redrawing enforces separation") {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed, 0);
            const auto prior = pr::build_prior(rng);
            CHECK(pr::min_pairwise_distance(prior) > 2.0 * prior.component_std);
        }
    }
    SUBCASE("fixed seed reproduces the means") {
        Rng a(17, 0), b(17, 0);
        CHECK(pr::build_prior(a).means == pr::build_prior(b).means);
    }
    SUBCASE("invalid options") {
        Rng rng(1, 0);
        pr::PriorOptions o;
        o.spread = -1.0;
        CHECK_THROWS_AS(pr::build_prior(rng, o), std::invalid_argument);
    }
}

TEST_CASE("sample_dataset") {
    SUBCASE("a single record is a deterministic image of its latent") {
        Rng rng(2, 0);
        const auto prior = pr::build_prior(rng);
        const auto gen = pr::build_generator(rng, 4);
        const auto d = pr::sample_dataset(prior, gen, 1, rng);
        REQUIRE(d.size() == 1);
        for (std::size_t m = 0; m < 2; ++m) {
            const auto x = gen.modalities[m].apply(d.z_true.row_span(0));
            CHECK(std::vector<double>(d.signals[m].row_span(0).begin(), d.signals[m].row_span(0).end()) == x);
        }
    }
    SUBCASE("default size gives an 8000/2000 split with all labels present") {
        const auto d = make(10000);
        CHECK(d.signal_dim() == 32);
        CHECK(d.n_modalities() == 2);
        CHECK(d.indices(pr::Split::train).size() == 8000);
        CHECK(d.indices(pr::Split::test).size() == 2000);
        CHECK(std::set<int>(d.labels.begin(), d.labels.end()).size() == 10);
    }
}

TEST_CASE("dataset invariants") {
    Rng rng(4, 0);
    const auto prior = pr::build_prior(rng);
    const auto gen = pr::build_generator(rng, 4);
    const auto d = pr::sample_dataset(prior, gen, 2000, rng);

    SUBCASE("both modalities are exact images of the same latent") {
        for (std::size_t i = 0; i < d.size(); i += 37)
            for (std::size_t m = 0; m < 2; ++m) {
                const auto x = gen.modalities[m].apply(d.z_true.row_span(i));
                for (std::size_t j = 0; j < x.size(); ++j) CHECK(d.signals[m](i, j) == x[j]);
            }
    }
    SUBCASE("1-NN on the true latents recovers every label") {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            std::size_t best = 0;
            double best_d = INFINITY;
            for (std::size_t j = 0; j < d.size(); ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < 4; ++c) s += std::pow(d.z_true(i, c) - d.z_true(j, c), 2);
                if (s < best_d) {
                    best_d = s;
                    best = j;
                }
            }
            correct += d.labels[best] == d.labels[i];
        }
        CHECK(correct == d.size());
    }
    SUBCASE("class means of modality 1 are further apart than the within-class spread") {
        std::vector<std::vector<double>> mean(10, std::vector<double>(32, 0.0));
        std::vector<int> count(10, 0);
        for (std::size_t i = 0; i < d.size(); ++i) {
            ++count[d.labels[i]];
            for (std::size_t j = 0; j < 32; ++j) mean[d.labels[i]][j] += d.signals[0](i, j);
        }
        for (int k = 0; k < 10; ++k)
            for (double& v : mean[k]) v /= count[k];
        double within = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i)
            for (std::size_t j = 0; j < 32; ++j) within += std::pow(d.signals[0](i, j) - mean[d.labels[i]][j], 2);
        within = std::sqrt(within / d.size());
        double between = INFINITY;
        for (int a = 0; a < 10; ++a)
            for (int b = a + 1; b < 10; ++b) {
                double s = 0.0;
                for (std::size_t j = 0; j < 32; ++j) s += std::pow(mean[a][j] - mean[b][j], 2);
                between = std::min(between, std::sqrt(s));
            }
        MESSAGE("min between-class distance " << between << ", within-class rms " << within);
        CHECK(between > within);
    }
}

TEST_CASE("render_protein pairs consecutive coordinates") {
    const auto zero = pr::render_protein(std::vector<double>(4, 0.0));
    REQUIRE(zero.size() == 2);
    CHECK(zero[0] == std::array<double, 2>{0.0, 0.0});
    CHECK(zero[1] == std::array<double, 2>{0.0, 0.0});
    const auto pts = pr::render_protein(std::vector<double>{1, 0, 0, 1});
    CHECK(pts[0] == std::array<double, 2>{1.0, 0.0});
    CHECK(pts[1] == std::array<double, 2>{0.0, 1.0});
    CHECK(pr::render_protein(std::vector<double>(64, 0.5)).size() == 32);
    CHECK_THROWS(pr::render_protein(std::vector<double>(3, 0.0)));
}

TEST_CASE("dataset persistence") {
    const auto dir = lftest::scratch_dir("protein_io");
    const auto d = make(300);
    SUBCASE("binary and CSV round trips are exact") {
        pr::save_dataset(d, dir / "d.lfds");
        pr::save_dataset(d, dir / "d.csv");
        CHECK(pr::load_dataset(dir / "d.lfds") == d);
        CHECK(pr::load_dataset(dir / "d.csv") == d);
    }
    SUBCASE("truncated file is rejected") {
        pr::save_binary(d, dir / "t.lfds");
        const auto full = slurp(dir / "t.lfds");
        {
            std::ofstream out(dir / "t.lfds", std::ios::binary | std::ios::trunc);
            out << full.substr(0, full.size() / 2);
        }
        CHECK_THROWS_AS(pr::load_binary(dir / "t.lfds"), pr::DatasetFormatError);
    }
    SUBCASE("wrong magic and version are rejected") {
        pr::save_binary(d, dir / "v.lfds");
        auto bytes = slurp(dir / "v.lfds");
        bytes[4] = 9;
        std::ofstream(dir / "v.lfds", std::ios::binary | std::ios::trunc) << bytes;
        CHECK_THROWS_AS(pr::load_binary(dir / "v.lfds"), pr::DatasetFormatError);
        bytes[0] = 'X';
        std::ofstream(dir / "m.lfds", std::ios::binary | std::ios::trunc) << bytes;
        CHECK_THROWS_AS(pr::load_binary(dir / "m.lfds"), pr::DatasetFormatError);
    }
    SUBCASE("same seed gives identical bytes") {
        pr::save_binary(make(300, 5), dir / "a.lfds");
        pr::save_binary(make(300, 5), dir / "b.lfds");
        CHECK(slurp(dir / "a.lfds") == slurp(dir / "b.lfds"));
    }
    SUBCASE("10000 samples load in under a second") {
        pr::save_binary(make(10000), dir / "big.lfds");
        const auto t0 = std::chrono::steady_clock::now();
        const auto big = pr::load_binary(dir / "big.lfds");
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        CHECK(big.size() == 10000);
        CHECK(s < 1.0);
    }
}
