#include <Eigen/Dense>
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "latentfuse/mvae/gaussian.hpp"
#include "latentfuse/mvae/model.hpp"
#include "support.hpp"

namespace mv = latentfuse::mvae;
namespace nk = latentfuse::numkit;
namespace pr = latentfuse::protein;
using nk::Rng;
using nk::Tape;
using nk::Tensor;

namespace {

mv::GaussianLatent g(std::vector<double> mean, std::vector<double> var) {
    mv::GaussianLatent q;
    q.mean = std::move(mean);
    for (double v : var) q.logvar.push_back(std::log(v));
    return q;
}

mv::Batch random_batch(Rng& rng, std::size_t rows, std::size_t n) {
    mv::Batch b;
    for (int m = 0; m < 2; ++m) b.signals.push_back(lftest::uniform_tensor(rng, rows, n, -1.0, 1.0));
    b.present = {true, true};
    return b;
}

double normal_pdf(double x, double mean, double var) {
    return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * M_PI * var);
}

}  // namespace

TEST_CASE("encode on an untrained model") {
    Rng rng(1, 1);
    auto model = mv::MvaeModel::create({2, 32, 4, 16}, mv::PosteriorMode::poe, rng);
    std::vector<double> x(32);
    for (double& v : x) v = 5.0 * rng.normal();
    const auto a = model.encode(x, 0);
    const auto b = model.encode(x, 0);
    CHECK(a.mean == b.mean);
    CHECK(a.logvar == b.logvar);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::isfinite(a.mean[i]));
        CHECK(a.logvar[i] >= mv::kLogvarMin);
        CHECK(a.logvar[i] <= mv::kLogvarMax);
    }
    CHECK_THROWS_AS(model.encode(std::vector<double>(31), 0), nk::ShapeError);
}

TEST_CASE("model shape bookkeeping") {
    Rng rng(1, 1);
    for (auto mode : {mv::PosteriorMode::joint, mv::PosteriorMode::poe, mv::PosteriorMode::moe}) {
        auto model = mv::MvaeModel::create({2, 32, 4, 16}, mode, rng);
        CHECK(model.decode(std::vector<double>(4, 0.1), 1).size() == 32);
        std::size_t total = 0;
        for (const auto& [name, t] : model.named_parameters()) {
            CHECK(t->all_finite());
            total += t->size();
        }
        CHECK(total == model.parameter_count());
        CHECK(mv::posterior_mode_from_string(mv::to_string(mode)) == mode);
    }
}

TEST_CASE("joint mode refuses a missing modality") {
    Rng rng(2, 2);
    auto model = mv::MvaeModel::create({2, 8, 3, 5}, mv::PosteriorMode::joint, rng);
    std::vector<double> x(8, 0.1);
    std::vector<std::span<const double>> xs{x, {}};
    CHECK_THROWS_AS(model.posterior_mean(xs), mv::MissingModalityError);
    auto batch = random_batch(rng, 4, 8);
    batch.present[1] = false;
    Tape tape;
    CHECK_THROWS_AS(mv::elbo_loss(tape, model, batch, rng, 1.0), mv::MissingModalityError);
}

TEST_CASE("poe_combine examples") {
    SUBCASE("empty product with prior is the standard normal") {
        const auto q = mv::poe_combine({}, true, 3);
        CHECK(q.mean == std::vector<double>(3, 0.0));
        CHECK(q.logvar == std::vector<double>(3, 0.0));
        CHECK_THROWS(mv::poe_combine({}, false, 3));
    }
    SUBCASE("one expert and the prior") {
        const std::vector<mv::GaussianLatent> e{g({2.0}, {1.0})};
        const auto q = mv::poe_combine(e, true, 1);
        CHECK(q.mean[0] == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(q.variance(0) == doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("two experts without prior against grid quadrature") {
        const std::vector<mv::GaussianLatent> e{g({1.0}, {1.0}), g({3.0}, {1.0})};
        const auto q = mv::poe_combine(e, false, 1);
        CHECK(q.mean[0] == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(q.variance(0) == doctest::Approx(0.5).epsilon(1e-14));
        const double h = 1e-3;
        std::vector<double> xs, prod;
        double mass = 0.0;
        for (double x = -20.0; x <= 20.0 + 1e-9; x += h) {
            xs.push_back(x);
            prod.push_back(normal_pdf(x, 1.0, 1.0) * normal_pdf(x, 3.0, 1.0));
            mass += prod.back();
        }
        mass *= h;
        double worst = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i)
            worst = std::max(worst, std::abs(prod[i] / mass - normal_pdf(xs[i], 2.0, 0.5)));
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("poe_combine precision additivity and permutation invariance") {
    Rng rng(6, 6);
    for (int t = 0; t < 100; ++t) {
        std::vector<mv::GaussianLatent> e(1 + rng.uniform_index(4));
        for (auto& q : e)
            for (int j = 0; j < 3; ++j) {
                q.mean.push_back(rng.normal(0.0, 2.0));
                q.logvar.push_back(rng.normal(0.0, 1.0));
            }
        const bool prior = rng.uniform() < 0.5;
        const auto a = mv::poe_combine(e, prior, 3);
        auto rev = e;
        std::reverse(rev.begin(), rev.end());
        const auto b = mv::poe_combine(rev, prior, 3);
        for (int j = 0; j < 3; ++j) {
            double precision = prior ? 1.0 : 0.0;
            for (const auto& q : e) precision += q.precision(j);
            CHECK(a.precision(j) == doctest::Approx(precision).epsilon(1e-13));
            CHECK(a.mean[j] == doctest::Approx(b.mean[j]).epsilon(1e-13));
            CHECK(a.logvar[j] == doctest::Approx(b.logvar[j]).epsilon(1e-13));
        }
    }
}

TEST_CASE("mixture of experts") {
    Rng rng(7, 7);
    const auto a = g({0.5, -1.0}, {0.3, 2.0});
    const std::vector<double> z{0.2, 0.1};
    SUBCASE("one expert is that expert") {
        const auto m = mv::moe_combine(std::vector<mv::GaussianLatent>{a});
        CHECK(m.log_density(z) == doctest::Approx(a.log_density(z)).epsilon(1e-14));
        CHECK(m.mean() == a.mean);
    }
    SUBCASE("two identical experts match either") {
        const auto m = mv::moe_combine(std::vector<mv::GaussianLatent>{a, a});
        CHECK(m.log_density(z) == doctest::Approx(a.log_density(z)).epsilon(1e-14));
    }
    SUBCASE("separated experts give a bimodal sample with mean near zero") {
        const auto m = mv::moe_combine(std::vector<mv::GaussianLatent>{g({-3.0}, {0.1}), g({3.0}, {0.1})});
        const int n = 10000;
        double sum = 0.0;
        int left = 0, middle = 0;
        for (int i = 0; i < n; ++i) {
            const double v = m.sample(rng)[0];
            sum += v;
            left += v < 0.0;
            middle += std::abs(v) < 1.5;
        }
        CHECK(std::abs(sum / n) < 0.15);
        CHECK(std::abs(left / double(n) - 0.5) < 0.03);
        CHECK(middle == 0);
    }
    CHECK_THROWS(mv::moe_combine({}));
}

TEST_CASE("reparameterised sampling") {
    Rng rng(8, 8);
    SUBCASE("at the clamp floor the sample is the mean") {
        mv::GaussianLatent q{{1.0, -2.0}, {-1000.0, -1000.0}};
        q.clamp();
        CHECK(q.logvar[0] == mv::kLogvarMin);
        const auto z = mv::reparam_sample(q, rng);
        CHECK(std::abs(z[0] - 1.0) < 0.05);
        CHECK(std::abs(z[1] + 2.0) < 0.05);
    }
    SUBCASE("pathwise gradient with respect to the mean is one") {
        Tensor mean = Tensor::row({0.3, -0.2});
        Tensor logvar = Tensor::row({0.1, 0.4});
        Tape tape;
        mv::LatentVars q{tape.param(mean), tape.param(logvar)};
        tape.backward(nk::sum(mv::reparam_sample(q, nk::rng_gaussian(rng, 1, 2, 0.0, 1.0))));
        CHECK(mean.grad()[0] == 1.0);
        CHECK(mean.grad()[1] == 1.0);
    }
    SUBCASE("sample moments") {
        const auto q = g({2.0}, {0.5});
        const int n = 100000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double z = mv::reparam_sample(q, rng)[0];
            s += z;
            s2 += z * z;
        }
        const double mean = s / n, var = s2 / n - mean * mean;
        CHECK(std::abs(mean - 2.0) < 0.01 * 2.0);
        CHECK(std::abs(var - 0.5) < 0.01 * 0.5);
    }
}

TEST_CASE("KL to the standard normal") {
    CHECK(mv::kl_standard_normal(mv::GaussianLatent::standard(4)) == 0.0);
    CHECK(mv::kl_standard_normal(g({1.0, 1.0}, {1.0, 1.0})) == doctest::Approx(1.0).epsilon(1e-14));
    const auto q = g({0.5, -1.0}, {1.35, 0.6});
    const double kl = mv::kl_standard_normal(q);
    Rng rng(9, 9);
    const auto prior = mv::GaussianLatent::standard(2);
    double mc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto z = mv::reparam_sample(q, rng);
        mc += q.log_density(z) - prior.log_density(z);
    }
    mc /= n;
    CHECK(std::abs(mc - kl) < 0.01 * kl);

    Tensor mean = Tensor::row({0.5, -1.0});
    Tensor logvar = Tensor::row({q.logvar[0], q.logvar[1]});
    Tape tape;
    const auto recorded = mv::kl_standard_normal(mv::LatentVars{tape.constant(mean), tape.constant(logvar)});
    CHECK(recorded.value().item() == doctest::Approx(kl).epsilon(1e-13));
}

TEST_CASE("ELBO gradients match finite differences with frozen noise") {
    Rng rng(10, 10);
    for (auto mode : {mv::PosteriorMode::joint, mv::PosteriorMode::poe, mv::PosteriorMode::moe}) {
        CAPTURE(mv::to_string(mode));
        auto model = mv::MvaeModel::create({2, 6, 3, 5}, mode, rng);
        const auto batch = random_batch(rng, 5, 6);
        const auto noise = mv::draw_elbo_noise(model, batch, rng);
        auto params = model.parameters();
        nk::zero_grads(params);
        {
            Tape tape;
            tape.backward(mv::elbo_loss(tape, model, batch, noise, 0.5));
        }
        std::vector<double> analytic, numeric;
        for (auto* p : params) {
            analytic.insert(analytic.end(), p->grad().begin(), p->grad().end());
            const auto n = lftest::numeric_grad(
                [&] {
                    Tape tape;
                    return mv::elbo_loss(tape, model, batch, noise, 0.5).value().item();
                },
                *p);
            numeric.insert(numeric.end(), n.begin(), n.end());
        }
        CHECK(lftest::rel_error(analytic, numeric) < 1e-3);
    }
}

TEST_CASE("training edge cases") {
    Rng rng(11, 11);
    const auto prior = pr::build_prior(rng);
    const auto gen = pr::build_generator(rng, 4);
    const auto data = pr::sample_dataset(prior, gen, 200, rng);
    auto model = mv::MvaeModel::create({2, 32, 4, 16}, mv::PosteriorMode::poe, rng);
    const auto before = model;

    mv::TrainConfig cfg;
    cfg.posterior_mode = mv::PosteriorMode::poe;
    cfg.epochs = 0;
    const auto r0 = mv::train(model, data, cfg);
    CHECK(r0.epoch_loss.empty());
    for (std::size_t i = 0; i < model.named_parameters().size(); ++i)
        CHECK(*model.named_parameters()[i].second == *before.named_parameters()[i].second);

    // Two one-epoch runs equal one two-epoch run.
    cfg.epochs = 2;
    auto full = before;
    const auto two = mv::train(full, data, cfg);
    cfg.epochs = 1;
    auto split = before;
    const auto first = mv::train(split, data, cfg);
    const auto second = mv::train(split, data, cfg, first.state);
    CHECK(second.state.epochs_done == 2);
    CHECK(second.state.optim.step == two.state.optim.step);
    CHECK(second.epoch_loss.back() == two.epoch_loss.back());
    for (std::size_t i = 0; i < full.named_parameters().size(); ++i)
        CHECK(*full.named_parameters()[i].second == *split.named_parameters()[i].second);
}

TEST_CASE("checkpoint round trip") {
    const auto dir = lftest::scratch_dir("mvae_ckpt");
    Rng rng(12, 12);
    auto model = mv::MvaeModel::create({2, 32, 4, 16}, mv::PosteriorMode::poe, rng);
    mv::TrainConfig cfg;
    cfg.posterior_mode = mv::PosteriorMode::poe;
    mv::save_model(dir / "m.json", model, cfg);
    auto cp = mv::load_model(dir / "m.json");
    CHECK(cp.model.mode() == mv::PosteriorMode::poe);
    CHECK(cp.model.shape() == model.shape());
    const auto a = model.named_parameters();
    const auto b = cp.model.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(*a[i].second == *b[i].second);
    }
    const auto batch = random_batch(rng, 8, 32);
    const auto noise = mv::draw_elbo_noise(model, batch, rng);
    Tape t1, t2;
    CHECK(mv::elbo_loss(t1, model, batch, noise, 1.0).value().item() ==
          mv::elbo_loss(t2, cp.model, batch, noise, 1.0).value().item());

    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK_THROWS_AS(mv::load_model(dir / "bad.json"), mv::CheckpointError);
    std::ofstream(dir / "other.json") << R"({"format": "something-else", "version": 1})";
    CHECK_THROWS_AS(mv::load_model(dir / "other.json"), mv::CheckpointError);
    std::ifstream in(dir / "m.json");
    auto doc = nlohmann::json::parse(in);
    doc["version"] = 99;
    std::ofstream(dir / "v99.json") << doc.dump();
    CHECK_THROWS_AS(mv::load_model(dir / "v99.json"), mv::CheckpointError);
    CHECK_THROWS_AS(mv::load_model(dir / "missing.json"), mv::CheckpointError);
}

TEST_CASE("default training run") {
    const auto& t = lftest::trained_default();
    REQUIRE(t.loss_curve.size() == 200);

    SUBCASE("final loss is under half the initial loss") {
        CHECK(t.loss_curve.back() < 0.5 * t.loss_curve.front());
    }
    SUBCASE("10-epoch block averages never increase") {
        std::vector<double> blocks;
        for (std::size_t i = 0; i + 10 <= t.loss_curve.size(); i += 10) {
            double s = 0.0;
            for (std::size_t j = i; j < i + 10; ++j) s += t.loss_curve[j];
            blocks.push_back(s / 10.0);
        }
        for (std::size_t i = 1; i < blocks.size(); ++i) CHECK(blocks[i] <= blocks[i - 1]);
    }
    SUBCASE("held-out reconstruction") {
        const auto test = t.data.indices(pr::Split::test);
        double mse = 0.0;
        for (std::size_t r : test) {
            std::vector<std::span<const double>> xs{t.data.signals[0].row_span(r), t.data.signals[1].row_span(r)};
            const auto z = t.model.posterior_mean(xs);
            for (std::size_t m = 0; m < 2; ++m) {
                const auto xhat = t.model.decode(z, m);
                for (std::size_t j = 0; j < 32; ++j) mse += std::pow(xhat[j] - xs[m][j], 2);
            }
        }
        mse /= static_cast<double>(test.size() * 64);
        MESSAGE("held-out per-element MSE " << mse);
        CHECK(mse < 0.02);
    }
    SUBCASE("posterior means are linearly related to the true latents") {
        const auto test = t.data.indices(pr::Split::test);
        const auto n = static_cast<Eigen::Index>(test.size());
        Eigen::MatrixXd X(n, 4), Y(n, 4);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto r = test[static_cast<std::size_t>(i)];
            std::vector<std::span<const double>> xs{t.data.signals[0].row_span(r), t.data.signals[1].row_span(r)};
            const auto z = t.model.posterior_mean(xs);
            for (int j = 0; j < 4; ++j) {
                X(i, j) = z[j];
                Y(i, j) = t.data.z_true(r, j);
            }
        }
        X.rowwise() -= X.colwise().mean();
        Y.rowwise() -= Y.colwise().mean();
        const Eigen::MatrixXd sxx = X.transpose() * X, syy = Y.transpose() * Y, sxy = X.transpose() * Y;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ex(sxx);
        const Eigen::MatrixXd wx = ex.operatorInverseSqrt();
        const Eigen::MatrixXd m = wx * sxy * syy.inverse() * sxy.transpose() * wx;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m);
        const Eigen::VectorXd corr = em.eigenvalues().cwiseSqrt();
        MESSAGE("canonical correlations " << corr.transpose());
        for (int j = 0; j < 4; ++j) CHECK(corr(j) > 0.5);
    }
}
