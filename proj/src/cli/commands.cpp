#include "latentfuse/cli/commands.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "latentfuse/eval/metrics.hpp"

namespace latentfuse::cli {

namespace fs = std::filesystem;
namespace nk = latentfuse::numkit;
using nk::Rng;

namespace {

constexpr std::uint64_t kDataStream = 0x64617461ULL;
constexpr std::uint64_t kInitStream = 0x696e6974ULL;

void require_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("output directory does not exist: " + dir.string());
}

protein::ProteinDataset read_dataset(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("dataset not found: " + path.string() + " (run gen-data first)");
    try {
        return protein::load_dataset(path);
    } catch (const protein::DatasetFormatError& e) {
        throw IoError("cannot load dataset " + path.string() + ": " + e.what());
    } catch (const nk::ShapeError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw IoError(e.what());
    }
}

mvae::Checkpoint read_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string() + " (run train first)");
    try {
        return mvae::load_model(path);
    } catch (const mvae::CheckpointError& e) {
        throw IoError(e.what());
    }
}

void check_model_matches(const mvae::MvaeModel& model, const protein::ProteinDataset& data) {
    const auto& s = model.shape();
    if (s.n_modalities != data.n_modalities() || s.signal_dim != data.signal_dim()) {
        throw ConfigError("checkpoint was trained for " + std::to_string(s.n_modalities) + " modalities of length " +
                          std::to_string(s.signal_dim) + " but the dataset has " +
                          std::to_string(data.n_modalities()) + " of length " + std::to_string(data.signal_dim()));
    }
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
    out.close();
    if (!out) throw IoError("write failed for " + path.string());
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

RunManifest start_manifest(const std::string& command, const ExperimentConfig& config) {
    RunManifest m;
    m.command = command;
    m.config_hash = config_hash(config);
    m.code_version = code_version();
    m.started_utc = utc_now();
    m.config = to_json(config);
    return m;
}

fs::path finish_manifest(RunManifest& m, const fs::path& dir, const std::vector<fs::path>& inputs,
                         const std::vector<fs::path>& outputs) {
    for (const auto& p : inputs) m.inputs.push_back(digest_file(p));
    for (const auto& p : outputs) m.outputs.push_back(digest_file(p));
    m.finished_utc = utc_now();
    const fs::path path = dir / (m.command + "_manifest.json");
    write_manifest(path, m);
    return path;
}

std::vector<samplers::Sampler> build_samplers(const ExperimentConfig& config, std::size_t signal_dim) {
    std::vector<samplers::Sampler> out;
    for (const auto& spec : config.sampler_specs()) out.push_back(samplers::Sampler::build(spec, signal_dim));
    return out;
}

// Fusion over the configured rows, written into `dir`.
FuseCommandResult run_fuse(const ExperimentConfig& config, const fs::path& dir, std::vector<fs::path>& inputs) {
    const auto data = read_dataset(config.dataset_path());
    const auto ckpt = read_checkpoint(config.checkpoint_path());
    inputs = {config.dataset_path(), config.checkpoint_path()};
    check_model_matches(ckpt.model, data);
    if (config.samplers.size() != data.n_modalities()) {
        throw ConfigError("samplers must list one entry per dataset modality");
    }
    for (const auto& s : config.samplers) {
        try {
            s.validate(data.signal_dim());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }

    auto rows = data.indices(config.fusion.split);
    if (rows.empty()) throw ConfigError("the selected split has no samples");
    if (rows.size() > config.fusion.n_samples) rows.resize(config.fusion.n_samples);

    const auto samplers = build_samplers(config, data.signal_dim());
    fusion::BatchFuseOptions options;
    options.observe = config.fusion.observe;
    options.seed = config.seed;
    options.threads = config.fusion.threads;
    const auto fused = fusion::batch_fuse(data, rows, ckpt.model, samplers, config.fusion.fusion, options);

    FuseCommandResult out;
    const std::size_t n_mod = data.n_modalities();
    std::vector<double> ae(n_mod, 0.0);
    for (std::size_t i : rows) {
        std::vector<std::span<const double>> xs;
        for (std::size_t m = 0; m < n_mod; ++m) xs.push_back(data.signals[m].row_span(i));
        const auto z = ckpt.model.posterior_mean(xs);
        for (std::size_t m = 0; m < n_mod; ++m)
            ae[m] += eval::recon_error(ckpt.model.decode(z, m), data.signals[m].row_span(i));
    }
    for (std::size_t m = 0; m < n_mod; ++m) {
        const bool observed = config.fusion.observe.empty() || config.fusion.observe[m];
        out.summary.push_back({m, observed ? fusion::effective_measurements(samplers[m]) : 0,
                               samplers[m].spec().noise_std, fused.summary[m].mean_recon_mse,
                               fused.summary[m].var_recon_mse, ae[m] / static_cast<double>(rows.size()),
                               rows.size()});
    }

    const fs::path records = dir / "fuse_records.csv";
    fusion::write_records_csv(records, fused.records);
    out.outputs.push_back(records);

    const fs::path summary = dir / "fuse_summary.csv";
    {
        auto f = open_out(summary);
        f << "modality,n_measurements,noise_std,mean_recon_mse,var_recon_mse,autoencoder_recon_mse,n_samples\n";
        for (const auto& r : out.summary) {
            f << r.modality + 1 << ',' << r.n_measurements << ',' << num(r.noise_std) << ',' << num(r.mean_recon_mse)
              << ',' << num(r.var_recon_mse) << ',' << num(r.autoencoder_recon_mse) << ',' << r.n_samples << '\n';
        }
        close_out(f, summary);
    }
    out.outputs.push_back(summary);

    if (config.fusion.dump_reconstructions) {
        const fs::path recon = dir / "reconstructions.csv";
        const fs::path zmap = dir / "z_map.csv";
        auto f = open_out(recon);
        f << "sample_id,modality";
        for (std::size_t j = 0; j < data.signal_dim(); ++j) f << ",x" << j;
        f << '\n';
        auto g = open_out(zmap);
        g << "sample_id,final_loss,best_restart,converged";
        for (std::size_t j = 0; j < ckpt.model.shape().latent_dim; ++j) g << ",z" << j;
        g << '\n';
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto& res = fused.results[k];
            for (std::size_t m = 0; m < n_mod; ++m) {
                f << rows[k] << ',' << m + 1;
                for (double v : res.reconstructions[m]) f << ',' << num(v);
                f << '\n';
            }
            g << rows[k] << ',' << num(res.final_loss()) << ',' << res.best_restart << ',' << (res.converged ? 1 : 0);
            for (double v : res.z_map) g << ',' << num(v);
            g << '\n';
        }
        close_out(f, recon);
        close_out(g, zmap);
        out.outputs.push_back(recon);
        out.outputs.push_back(zmap);
    }
    return out;
}

// Few-shot classification written into `dir`.
CommandResult run_classify(const ExperimentConfig& config, const fs::path& dir, std::vector<fs::path>& inputs) {
    const auto data = read_dataset(config.dataset_path());
    inputs = {config.dataset_path()};
    const bool want_sflr =
        std::find(config.eval.methods.begin(), config.eval.methods.end(), "sflr") != config.eval.methods.end();
    mvae::MvaeModel model;
    if (want_sflr) {
        auto ckpt = read_checkpoint(config.checkpoint_path());
        check_model_matches(ckpt.model, data);
        model = std::move(ckpt.model);
        inputs.push_back(config.checkpoint_path());
    }

    eval::FewShotConfig fc;
    fc.shots = config.eval.shots;
    fc.n_seeds = config.eval.n_seeds;
    fc.seed = config.seed;
    fc.methods = config.eval.methods;
    fc.baseline = config.eval.baseline;
    fc.embedding = config.eval.embedding;
    fc.sampler_specs = config.sampler_specs();
    fc.fusion = config.fusion.fusion;
    fc.max_queries = config.eval.max_queries;
    fc.threads = config.fusion.threads;
    const auto rows = eval::fewshot_protocol(model, data, fc);
    const auto summary = eval::summarize(rows);

    CommandResult out;
    const fs::path results = dir / "classify_results.csv";
    eval::write_fewshot_csv(results, rows);
    out.outputs.push_back(results);

    const fs::path sum = dir / "classify_summary.csv";
    {
        auto f = open_out(sum);
        f << "method,shots,mean_f1_macro,n_seeds\n";
        for (const auto& r : summary) f << r.method << ',' << r.shots << ',' << num(r.f1_macro) << ',' << fc.n_seeds << '\n';
        close_out(f, sum);
    }
    out.outputs.push_back(sum);

    const fs::path dat = dir / "classify_summary.dat";
    {
        auto f = open_out(dat);
        f << "# shots";
        for (const auto& m : fc.methods) f << ' ' << m;
        f << '\n';
        for (int s : fc.shots) {
            f << s;
            for (const auto& m : fc.methods) {
                for (const auto& r : summary)
                    if (r.method == m && r.shots == s) f << ' ' << num(r.f1_macro);
            }
            f << '\n';
        }
        close_out(f, dat);
    }
    out.outputs.push_back(dat);
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

std::string format_value(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

CommandResult cmd_gen_data(const ExperimentConfig& config) {
    config.validate();
    auto manifest = start_manifest("gen-data", config);
    const fs::path dir(config.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());

    Rng rng(config.seed, kDataStream);
    const auto prior = protein::build_prior(rng, config.dataset.prior);
    const auto gen = protein::build_generator(rng, config.dataset.prior.latent_dim, config.dataset.generator);
    const auto data = protein::sample_dataset(prior, gen, config.dataset.n_samples, rng);

    CommandResult out;
    const fs::path path = config.dataset_path();
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    try {
        protein::save_dataset(data, path);
    } catch (const std::runtime_error& e) {
        throw IoError(e.what());
    }
    out.outputs.push_back(path);

    json truth;
    truth["n_components"] = prior.n_components();
    truth["latent_dim"] = prior.latent_dim();
    truth["component_std"] = prior.component_std;
    truth["weights"] = prior.weights;
    json means = json::array();
    for (std::size_t k = 0; k < prior.n_components(); ++k) {
        auto r = prior.means.row_span(k);
        means.push_back(std::vector<double>(r.begin(), r.end()));
    }
    truth["means"] = means;
    truth["min_pairwise_distance"] = protein::min_pairwise_distance(prior);
    json gens = json::array();
    for (const auto& g : gen.modalities) {
        json entry;
        entry["activation"] = "tanh";
        entry["rows"] = g.weight.rows();
        entry["cols"] = g.weight.cols();
        entry["weight"] = std::vector<double>(g.weight.data().begin(), g.weight.data().end());
        entry["bias"] = std::vector<double>(g.bias.data().begin(), g.bias.data().end());
        gens.push_back(entry);
    }
    truth["generators"] = gens;
    const fs::path truth_path = dir / "truth.json";
    {
        auto f = open_out(truth_path);
        f << truth.dump(2) << '\n';
        close_out(f, truth_path);
    }
    out.outputs.push_back(truth_path);
    out.manifest = finish_manifest(manifest, dir, {}, out.outputs);
    return out;
}

CommandResult cmd_train(const ExperimentConfig& config) {
    config.validate();
    auto manifest = start_manifest("train", config);
    const fs::path dir(config.output_dir);
    require_dir(dir);
    const auto data = read_dataset(config.dataset_path());
    std::vector<fs::path> inputs{config.dataset_path()};

    mvae::TrainConfig tc = config.mvae_train.train;
    tc.seed = config.seed;
    mvae::ModelShape shape = config.mvae_train.shape;
    shape.n_modalities = data.n_modalities();
    shape.signal_dim = data.signal_dim();

    const fs::path ckpt_path = config.checkpoint_path();
    mvae::MvaeModel model;
    std::optional<mvae::TrainState> resume;
    if (config.mvae_train.resume) {
        auto ckpt = read_checkpoint(ckpt_path);
        if (!(ckpt.model.shape() == shape) || ckpt.model.mode() != tc.posterior_mode) {
            throw ConfigError("checkpoint shape or posterior mode differs from the configuration; cannot resume");
        }
        inputs.push_back(ckpt_path);
        model = std::move(ckpt.model);
        resume = ckpt.state;
    } else {
        Rng init(config.seed, kInitStream);
        model = mvae::MvaeModel::create(shape, tc.posterior_mode, init);
    }
    // Digest inputs now: resuming overwrites the checkpoint.
    for (const auto& p : inputs) manifest.inputs.push_back(digest_file(p));

    const int first_epoch = resume ? resume->epochs_done : 0;
    const auto result = mvae::train(model, data, tc, resume);
    mvae::save_model(ckpt_path, model, tc, result.state);

    const fs::path curve = dir / "loss_curve.csv";
    const bool append = config.mvae_train.resume && fs::exists(curve);
    {
        std::ofstream f(curve, append ? std::ios::app : std::ios::trunc);
        if (!f) throw IoError("cannot write " + curve.string());
        if (!append) f << "epoch,loss\n";
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
            f << first_epoch + static_cast<int>(e) + 1 << ',' << num(result.epoch_loss[e]) << '\n';
        close_out(f, curve);
    }
    CommandResult out;
    out.outputs = {ckpt_path, curve};
    out.manifest = finish_manifest(manifest, dir, {}, out.outputs);
    return out;
}

FuseCommandResult cmd_fuse(const ExperimentConfig& config) {
    config.validate();
    auto manifest = start_manifest("fuse", config);
    const fs::path dir(config.output_dir);
    require_dir(dir);
    std::vector<fs::path> inputs;
    auto out = run_fuse(config, dir, inputs);
    out.manifest = finish_manifest(manifest, dir, inputs, out.outputs);
    return out;
}

CommandResult cmd_classify(const ExperimentConfig& config) {
    config.validate();
    auto manifest = start_manifest("classify", config);
    const fs::path dir(config.output_dir);
    require_dir(dir);
    std::vector<fs::path> inputs;
    auto out = run_classify(config, dir, inputs);
    out.manifest = finish_manifest(manifest, dir, inputs, out.outputs);
    return out;
}

ExperimentConfig sweep_point(const ExperimentConfig& config, double value) {
    ExperimentConfig c = config;
    switch (config.sweep.axis) {
        case SweepAxis::n_measurements: {
            bool any = false;
            for (auto& s : c.samplers) {
                if (s.kind != samplers::SamplerKind::random_projection) continue;
                s.n_measurements = static_cast<std::size_t>(value);
                any = true;
            }
            if (!any) throw ConfigError("an n_measurements sweep needs at least one random_projection sampler");
            break;
        }
        case SweepAxis::noise_std:
            for (auto& s : c.samplers) s.noise_std = value;
            break;
        case SweepAxis::missing_ratio: {
            bool any = false;
            for (auto& s : c.samplers) {
                if (s.kind != samplers::SamplerKind::mask) continue;
                s.missing_ratio = value;
                any = true;
            }
            if (!any) throw ConfigError("a missing_ratio sweep needs at least one mask sampler");
            break;
        }
        case SweepAxis::shots:
            c.eval.shots = {static_cast<int>(value)};
            break;
    }
    c.sweep.values = {value};
    return c;
}

CommandResult cmd_sweep(const ExperimentConfig& config) {
    config.validate();
    // Reject impossible points before any compute.
    std::vector<ExperimentConfig> points;
    for (double v : config.sweep.values) {
        points.push_back(sweep_point(config, v));
        points.back().validate();
    }
    auto manifest = start_manifest("sweep", config);
    const fs::path dir(config.output_dir);
    require_dir(dir);
    const std::string axis = to_string(config.sweep.axis);
    const fs::path sweep_dir = dir / ("sweep_" + axis);
    std::error_code ec;
    fs::create_directories(sweep_dir, ec);
    if (ec) throw IoError("cannot create " + sweep_dir.string() + ": " + ec.message());

    const bool classify = config.sweep.axis == SweepAxis::shots;
    const std::string point_file = classify ? "classify_results.csv" : "fuse_records.csv";
    CommandResult out;
    std::vector<fs::path> inputs;
    std::vector<std::vector<FuseSummaryRow>> summaries;
    std::vector<fs::path> point_csvs;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const fs::path pdir = sweep_dir / format_value(config.sweep.values[i]);
        fs::create_directories(pdir, ec);
        if (ec) throw IoError("cannot create " + pdir.string() + ": " + ec.message());
        if (classify) {
            auto r = run_classify(points[i], pdir, inputs);
            out.outputs.insert(out.outputs.end(), r.outputs.begin(), r.outputs.end());
        } else {
            auto r = run_fuse(points[i], pdir, inputs);
            summaries.push_back(r.summary);
            out.outputs.insert(out.outputs.end(), r.outputs.begin(), r.outputs.end());
        }
        point_csvs.push_back(pdir / point_file);
    }

    const fs::path agg = dir / ("sweep_" + axis + ".csv");
    {
        auto f = open_out(agg);
        for (std::size_t i = 0; i < point_csvs.size(); ++i) {
            std::istringstream lines(read_file(point_csvs[i]));
            std::string line;
            std::getline(lines, line);
            if (i == 0) f << "sweep_" << axis << ',' << line << '\n';
            const std::string label = format_value(config.sweep.values[i]);
            while (std::getline(lines, line))
                if (!line.empty()) f << label << ',' << line << '\n';
        }
        close_out(f, agg);
    }
    out.outputs.push_back(agg);

    const fs::path dat = dir / ("sweep_" + axis + ".dat");
    {
        auto f = open_out(dat);
        if (classify) {
            f << "# shots";
            for (const auto& m : config.eval.methods) f << ' ' << m;
            f << '\n';
            for (std::size_t i = 0; i < point_csvs.size(); ++i) {
                const auto rows = eval::read_fewshot_csv(point_csvs[i]);
                const auto summary = eval::summarize(rows);
                f << format_value(config.sweep.values[i]);
                for (const auto& m : config.eval.methods)
                    for (const auto& r : summary)
                        if (r.method == m) f << ' ' << num(r.f1_macro);
                f << '\n';
            }
        } else {
            f << "# " << axis;
            for (std::size_t m = 0; m < config.samplers.size(); ++m)
                f << " mean_recon_m" << m + 1 << " var_recon_m" << m + 1;
            f << '\n';
            for (std::size_t i = 0; i < summaries.size(); ++i) {
                f << format_value(config.sweep.values[i]);
                for (const auto& r : summaries[i]) f << ' ' << num(r.mean_recon_mse) << ' ' << num(r.var_recon_mse);
                f << '\n';
            }
        }
        close_out(f, dat);
    }
    out.outputs.push_back(dat);
    out.manifest = finish_manifest(manifest, dir, inputs, out.outputs);
    return out;
}

}  // namespace latentfuse::cli
