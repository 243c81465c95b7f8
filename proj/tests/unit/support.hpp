#pragma once

#include <cmath>
#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "latentfuse/cli/commands.hpp"
#include "latentfuse/mvae/model.hpp"
#include "latentfuse/numkit/autodiff.hpp"
#include "latentfuse/protein/protein.hpp"

namespace lftest {

namespace fs = std::filesystem;
namespace nk = latentfuse::numkit;

inline double rel_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

/// Central differences of a scalar function over every entry of `x`.
inline std::vector<double> numeric_grad(const std::function<double()>& f, nk::Tensor& x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline nk::Tensor uniform_tensor(nk::Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
    nk::Tensor t(r, c);
    for (double& v : t.storage()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

/// Fresh empty directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("latentfuse_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct Trained {
    latentfuse::cli::ExperimentConfig config;
    latentfuse::protein::ProteinDataset data;
    latentfuse::mvae::MvaeModel model;
    std::vector<double> loss_curve;
};

/// Default dataset and trained model. Uses the directory in LF_SHARED_DIR when
/// the ctest fixture has produced it there, otherwise builds one.
inline const Trained& trained_default() {
    static const Trained t = [] {
        Trained out;
        out.config = latentfuse::cli::default_config();
        const char* env = std::getenv("LF_SHARED_DIR");
        const bool shared = env && fs::exists(fs::path(env) / "model.json");
        out.config.output_dir = shared ? std::string(env) : (fs::temp_directory_path() / "latentfuse_test_trained").string();
        if (!shared) {
            latentfuse::cli::cmd_gen_data(out.config);
            latentfuse::cli::cmd_train(out.config);
        }
        out.data = latentfuse::protein::load_dataset(out.config.dataset_path());
        out.model = latentfuse::mvae::load_model(out.config.checkpoint_path()).model;
        std::ifstream in(fs::path(out.config.output_dir) / "loss_curve.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) out.loss_curve.push_back(std::stod(line.substr(line.find(',') + 1)));
        return out;
    }();
    return t;
}

}  // namespace lftest
