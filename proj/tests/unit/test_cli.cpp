#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "latentfuse/cli/commands.hpp"
#include "latentfuse/eval/classify.hpp"
#include "support.hpp"

namespace cli = latentfuse::cli;
namespace pr = latentfuse::protein;
namespace mv = latentfuse::mvae;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

cli::ExperimentConfig small_config(const fs::path& dir, std::size_t n = 500, int epochs = 3) {
    auto c = cli::default_config();
    c.output_dir = dir.string();
    c.dataset.n_samples = n;
    c.mvae_train.train.epochs = epochs;
    c.fusion.n_samples = 4;
    c.fusion.fusion.max_iters = 200;
    c.fusion.fusion.n_restarts = 2;
    return c;
}

struct EnvGuard {
    explicit EnvGuard(const char* value) {
        if (value) setenv("LATENTFUSE_SEED", value, 1);
        else unsetenv("LATENTFUSE_SEED");
    }
    ~EnvGuard() { unsetenv("LATENTFUSE_SEED"); }
};

}  // namespace

TEST_CASE("config parsing") {
    const auto base = cli::default_config();
    CHECK_NOTHROW(base.validate());

    CHECK_THROWS_AS(cli::merge_config(base, cli::json{{"bogus", 1}}), cli::ConfigError);
    CHECK_THROWS_AS(cli::merge_config(base, cli::json{{"fusion", {{"prior_wieght", 1.0}}}}), cli::ConfigError);
    CHECK_THROWS_AS(cli::merge_config(base, cli::json{{"seed", "one"}}), cli::ConfigError);
    CHECK_THROWS_AS(cli::merge_config(base, cli::json{{"seed", -3}}), cli::ConfigError);
    CHECK_THROWS_AS(cli::merge_config(base, cli::json{{"version", 99}}), cli::ConfigError);

    const auto merged = cli::merge_config(base, cli::json{{"seed", 9}, {"fusion", {{"prior_weight", 0.5}}}});
    CHECK(merged.seed == 9);
    CHECK(merged.fusion.fusion.prior_weight == 0.5);
    CHECK(merged.mvae_train.train.epochs == base.mvae_train.train.epochs);

    auto bad = base;
    bad.samplers[0].n_measurements = 33;
    CHECK_THROWS_AS(bad.validate(), cli::ConfigError);
    bad = base;
    bad.samplers[0].kind = latentfuse::samplers::SamplerKind::mask;
    bad.samplers[0].missing_ratio = 1.2;
    CHECK_THROWS_AS(bad.validate(), cli::ConfigError);
}

TEST_CASE("config serialisation and hashing") {
    auto c = cli::default_config();
    c.seed = 17;
    c.fusion.fusion.learning_rate = 0.003;
    const auto back = cli::merge_config(cli::default_config(), cli::to_json(c));
    CHECK(cli::to_json(back) == cli::to_json(c));
    CHECK(cli::config_hash(back) == cli::config_hash(c));
    CHECK(cli::config_hash(c).size() == 64);
    auto d = c;
    d.seed = 18;
    CHECK(cli::config_hash(d) != cli::config_hash(c));

    const auto dir = lftest::scratch_dir("config_file");
    std::ofstream(dir / "c.json") << cli::to_json(c).dump(2);
    CHECK(cli::to_json(cli::load_config(dir / "c.json")) == cli::to_json(c));
    CHECK_THROWS(cli::load_config(dir / "missing.json"));
    std::ofstream(dir / "broken.json") << "{ \"seed\": ";
    CHECK_THROWS_AS(cli::load_config(dir / "broken.json"), cli::ConfigError);
}

TEST_CASE("seed from the environment") {
    {
        EnvGuard g(nullptr);
        CHECK_FALSE(cli::env_seed().has_value());
    }
    {
        EnvGuard g("42");
        CHECK(cli::env_seed().value() == 42);
    }
    for (const char* badv : {"-1", "12abc", "x", "99999999999999999999999"}) {
        EnvGuard g(badv);
        CHECK_THROWS_AS(cli::env_seed(), cli::ConfigError);
    }
}

TEST_CASE("sha256 known answer") {
    CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("gen-data") {
    SUBCASE("a single sample") {
        const auto dir = lftest::scratch_dir("gen_one");
        auto c = small_config(dir, 1);
        const auto r = cli::cmd_gen_data(c);
        const auto data = pr::load_dataset(c.dataset_path());
        CHECK(data.size() == 1);
        CHECK(fs::exists(r.manifest));
    }
    SUBCASE("same seed gives the same bytes, another seed does not") {
        const auto a = lftest::scratch_dir("gen_a"), b = lftest::scratch_dir("gen_b"), o = lftest::scratch_dir("gen_o");
        cli::cmd_gen_data(small_config(a));
        cli::cmd_gen_data(small_config(b));
        auto other = small_config(o);
        other.seed = 2;
        cli::cmd_gen_data(other);
        const auto ds = small_config(a).dataset.path;
        CHECK(cli::sha256_file(a / ds) == cli::sha256_file(b / ds));
        CHECK(cli::sha256_file(a / ds) != cli::sha256_file(o / ds));
        CHECK(slurp(a / "truth.json") == slurp(b / "truth.json"));
    }
    SUBCASE("manifest records the config hash and output digests") {
        const auto dir = lftest::scratch_dir("gen_manifest");
        const auto c = small_config(dir);
        const auto r = cli::cmd_gen_data(c);
        const auto m = cli::json::parse(slurp(r.manifest));
        CHECK(m.at("config_hash") == cli::config_hash(c));
        CHECK(m.at("outputs").size() == r.outputs.size());
        for (const auto& o : m.at("outputs"))
            CHECK(o.at("sha256") == cli::sha256_file(dir / o.at("path").get<std::string>()));
    }
}

TEST_CASE("train with zero epochs then resume equals a direct run") {
    const auto a = lftest::scratch_dir("train_resume"), b = lftest::scratch_dir("train_direct");
    auto ca = small_config(a, 500, 0);
    cli::cmd_gen_data(ca);
    cli::cmd_train(ca);
    CHECK(mv::load_model(ca.checkpoint_path()).state.epochs_done == 0);
    ca.mvae_train.train.epochs = 2;
    ca.mvae_train.resume = true;
    cli::cmd_train(ca);
    ca.mvae_train.train.epochs = 1;
    cli::cmd_train(ca);

    auto cb = small_config(b, 500, 3);
    cli::cmd_gen_data(cb);
    cli::cmd_train(cb);

    const auto ka = mv::load_model(ca.checkpoint_path()), kb = mv::load_model(cb.checkpoint_path());
    CHECK(ka.state.epochs_done == 3);
    CHECK(ka.state.optim.step == kb.state.optim.step);
    const auto pa = ka.model.named_parameters(), pb = kb.model.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].second == *pb[i].second);
    CHECK(lines(a / "loss_curve.csv") == lines(b / "loss_curve.csv"));
}

TEST_CASE("missing inputs are I/O errors") {
    const auto dir = lftest::scratch_dir("missing_inputs");
    auto c = small_config(dir / "nothing_here");
    CHECK_THROWS_AS(cli::cmd_fuse(c), cli::IoError);
    CHECK_THROWS_AS(cli::cmd_train(c), cli::IoError);
}

TEST_CASE("fuse, sweep and classify on the shared model") {
    const auto& t = lftest::trained_default();
    const auto dir = lftest::scratch_dir("commands");

    auto base = t.config;
    base.output_dir = dir.string();
    base.dataset.path = fs::absolute(t.config.dataset_path()).string();
    base.mvae_train.checkpoint = fs::absolute(t.config.checkpoint_path()).string();
    base.fusion.n_samples = 8;

    SUBCASE("with identity samplers fusion is close to the autoencoder") {
        auto c = base;
        for (auto& s : c.samplers) {
            s.kind = latentfuse::samplers::SamplerKind::identity;
            s.noise_std = 0.0;
        }
        const auto r = cli::cmd_fuse(c);
        REQUIRE(r.summary.size() == 2);
        for (const auto& row : r.summary) {
            MESSAGE("modality " << row.modality << ": fused " << row.mean_recon_mse << ", autoencoder "
                                << row.autoencoder_recon_mse);
            CHECK(row.mean_recon_mse <= 1.1 * row.autoencoder_recon_mse);
        }
    }

    SUBCASE("a sweep is the concatenation of its points") {
        auto c = base;
        c.fusion.fusion.max_iters = 300;
        c.sweep.axis = cli::SweepAxis::n_measurements;
        c.sweep.values = {1, 4};
        const auto r = cli::cmd_sweep(c);
        const auto agg = lines(dir / "sweep_n_measurements.csv");
        REQUIRE(!agg.empty());
        CHECK(agg[0].rfind("sweep_n_measurements,", 0) == 0);

        std::vector<std::string> rebuilt{agg[0]};
        for (double v : c.sweep.values) {
            const auto point = lines(dir / "sweep_n_measurements" / cli::format_value(v) / "fuse_records.csv");
            REQUIRE(point.size() > 1);
            CHECK(agg[0] == "sweep_n_measurements," + point[0]);
            for (std::size_t i = 1; i < point.size(); ++i) rebuilt.push_back(cli::format_value(v) + "," + point[i]);
        }
        CHECK(rebuilt == agg);

        const auto m = cli::json::parse(slurp(r.manifest));
        std::size_t point_records = 0;
        for (const auto& o : m.at("outputs"))
            point_records += o.at("path").get<std::string>().find("fuse_records.csv") != std::string::npos;
        CHECK(point_records == c.sweep.values.size());

        // A single point reproduces a plain fuse run with the same settings.
        auto single = cli::sweep_point(c, 4);
        single.output_dir = (dir / "single").string();
        fs::create_directories(dir / "single");
        cli::cmd_fuse(single);
        for (const char* f : {"fuse_records.csv", "fuse_summary.csv"})
            CHECK(slurp(dir / "single" / f) == slurp(dir / "sweep_n_measurements" / "4" / f));
    }

    SUBCASE("classify with one method is reproducible") {
        auto c = base;
        c.eval.methods = {"sflr"};
        c.eval.shots = {1, 5};
        c.eval.n_seeds = 2;
        for (const char* sub : {"c1", "c2"}) {
            fs::create_directories(dir / sub);
            c.output_dir = (dir / sub).string();
            cli::cmd_classify(c);
        }
        const auto a = lines(dir / "c1" / "classify_results.csv");
        CHECK(a.size() == 1 + 2 * 2);
        for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i].rfind("sflr,", 0) == 0);
        CHECK(slurp(dir / "c1" / "classify_results.csv") == slurp(dir / "c2" / "classify_results.csv"));
        CHECK(slurp(dir / "c1" / "classify_summary.csv") == slurp(dir / "c2" / "classify_summary.csv"));
    }
}
