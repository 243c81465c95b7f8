#include "latentfuse/cli/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "latentfuse/cli/manifest.hpp"

namespace latentfuse::cli {

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::n_measurements: return "n_measurements";
        case SweepAxis::noise_std: return "noise_std";
        case SweepAxis::missing_ratio: return "missing_ratio";
        case SweepAxis::shots: return "shots";
    }
    return "?";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
    if (name == "n_measurements") return SweepAxis::n_measurements;
    if (name == "noise_std") return SweepAxis::noise_std;
    if (name == "missing_ratio") return SweepAxis::missing_ratio;
    if (name == "shots") return SweepAxis::shots;
    throw ConfigError("unknown sweep axis '" + name + "' (n_measurements, noise_std, missing_ratio, shots)");
}

std::filesystem::path ExperimentConfig::resolve(const std::string& path) const {
    std::filesystem::path p(path);
    if (p.is_absolute()) return p;
    return std::filesystem::path(output_dir) / p;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    for (int m = 0; m < 2; ++m) {
        samplers::SamplerSpec s;
        s.kind = samplers::SamplerKind::random_projection;
        s.n_measurements = 2;
        c.samplers.push_back(s);
    }
    return c;
}

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            throw ConfigError("unknown key '" + key + "' in " + where);
        }
    }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t> ||
                      std::is_same_v<T, unsigned>) {
            if (!it->is_number_integer() || it->get<std::int64_t>() < 0) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, int>) {
            if (!it->is_number_integer()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, double>) {
            if (!it->is_number()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!it->is_string()) throw ConfigError("");
        }
        out = it->get<T>();
    } catch (const std::exception&) {
        throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

template <class T>
void read_list(const json& obj, const char* key, std::vector<T>& out, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (!it->is_array()) throw ConfigError("key '" + std::string(key) + "' in " + where + " must be an array");
    std::vector<T> values;
    for (std::size_t i = 0; i < it->size(); ++i) {
        json wrap = {{"v", (*it)[i]}};
        T v{};
        read(wrap, "v", v, where + "." + key + "[" + std::to_string(i) + "]");
        values.push_back(v);
    }
    out = std::move(values);
}

template <class E, class F>
void read_enum(const json& obj, const char* key, E& out, const std::string& where, F parse) {
    std::string name;
    bool present = obj.contains(key);
    read(obj, key, name, where);
    if (!present) return;
    try {
        out = parse(name);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string(key) + " in " + where + ": " + e.what());
    }
}

samplers::SamplerSpec parse_sampler(const json& j, samplers::SamplerSpec s, const std::string& where) {
    check_keys(j, {"kind", "n_measurements", "missing_ratio", "noise_std", "seed"}, where);
    read_enum(j, "kind", s.kind, where, samplers::sampler_kind_from_string);
    read(j, "n_measurements", s.n_measurements, where);
    read(j, "missing_ratio", s.missing_ratio, where);
    read(j, "noise_std", s.noise_std, where);
    read(j, "seed", s.seed, where);
    return s;
}

json sampler_json(const samplers::SamplerSpec& s) {
    return {{"kind", samplers::to_string(s.kind)},
            {"n_measurements", s.n_measurements},
            {"missing_ratio", s.missing_ratio},
            {"noise_std", s.noise_std},
            {"seed", s.seed}};
}

}  // namespace

ExperimentConfig merge_config(ExperimentConfig c, const json& doc) {
    check_keys(doc, {"version", "seed", "output_dir", "dataset", "mvae_train", "samplers", "fusion", "eval", "sweep"},
               "config");
    if (doc.contains("version")) {
        int version = 0;
        read(doc, "version", version, "config");
        if (version != kConfigVersion) {
            throw ConfigError("unsupported config version " + std::to_string(version) + " (expected " +
                              std::to_string(kConfigVersion) + ")");
        }
    }
    read(doc, "seed", c.seed, "config");
    read(doc, "output_dir", c.output_dir, "config");

    if (auto it = doc.find("dataset"); it != doc.end()) {
        const std::string w = "dataset";
        check_keys(*it, {"path", "n_samples", "signal_dim", "n_modalities", "latent_dim", "n_components", "spread",
                         "component_std", "max_redraws", "weight_std", "bias_std"},
                   w);
        auto& d = c.dataset;
        read(*it, "path", d.path, w);
        read(*it, "n_samples", d.n_samples, w);
        read(*it, "signal_dim", d.generator.signal_dim, w);
        read(*it, "n_modalities", d.generator.n_modalities, w);
        read(*it, "latent_dim", d.prior.latent_dim, w);
        read(*it, "n_components", d.prior.n_components, w);
        read(*it, "spread", d.prior.spread, w);
        read(*it, "component_std", d.prior.component_std, w);
        read(*it, "max_redraws", d.prior.max_redraws, w);
        read(*it, "weight_std", d.generator.weight_std, w);
        read(*it, "bias_std", d.generator.bias_std, w);
    }
    if (auto it = doc.find("mvae_train"); it != doc.end()) {
        const std::string w = "mvae_train";
        check_keys(*it, {"checkpoint", "epochs", "batch_size", "learning_rate", "kl_scale", "posterior_mode",
                         "modality_dropout_prob", "grad_clip", "latent_dim", "hidden", "resume"},
                   w);
        auto& t = c.mvae_train;
        read(*it, "checkpoint", t.checkpoint, w);
        read(*it, "epochs", t.train.epochs, w);
        read(*it, "batch_size", t.train.batch_size, w);
        read(*it, "learning_rate", t.train.learning_rate, w);
        read(*it, "kl_scale", t.train.kl_scale, w);
        read_enum(*it, "posterior_mode", t.train.posterior_mode, w, mvae::posterior_mode_from_string);
        read(*it, "modality_dropout_prob", t.train.modality_dropout_prob, w);
        read(*it, "grad_clip", t.train.grad_clip, w);
        read(*it, "latent_dim", t.shape.latent_dim, w);
        read(*it, "hidden", t.shape.hidden, w);
        read(*it, "resume", t.resume, w);
    }
    if (auto it = doc.find("samplers"); it != doc.end()) {
        if (!it->is_array()) throw ConfigError("samplers must be an array with one entry per modality");
        std::vector<samplers::SamplerSpec> specs;
        for (std::size_t m = 0; m < it->size(); ++m) {
            const auto base = m < c.samplers.size() ? c.samplers[m] : samplers::SamplerSpec{};
            specs.push_back(parse_sampler((*it)[m], base, "samplers[" + std::to_string(m) + "]"));
        }
        c.samplers = std::move(specs);
    }
    if (auto it = doc.find("fusion"); it != doc.end()) {
        const std::string w = "fusion";
        check_keys(*it, {"prior_weight", "modality_weights", "optimizer", "learning_rate", "modality_learning_rates",
                         "prior_learning_rate", "max_iters", "tol", "window", "n_restarts", "inner_steps",
                         "impute_init", "n_samples", "split", "observe", "threads", "dump_reconstructions"},
                   w);
        auto& f = c.fusion;
        read(*it, "prior_weight", f.fusion.prior_weight, w);
        read_list(*it, "modality_weights", f.fusion.modality_weights, w);
        read_enum(*it, "optimizer", f.fusion.optimizer, w, numkit::optimizer_kind_from_string);
        read(*it, "learning_rate", f.fusion.learning_rate, w);
        read_list(*it, "modality_learning_rates", f.fusion.modality_learning_rates, w);
        read(*it, "prior_learning_rate", f.fusion.prior_learning_rate, w);
        read(*it, "max_iters", f.fusion.max_iters, w);
        read(*it, "tol", f.fusion.tol, w);
        read(*it, "window", f.fusion.window, w);
        read(*it, "n_restarts", f.fusion.n_restarts, w);
        read(*it, "inner_steps", f.fusion.inner_steps, w);
        read(*it, "impute_init", f.fusion.impute_init, w);
        read(*it, "n_samples", f.n_samples, w);
        read_enum(*it, "split", f.split, w, [](const std::string& s) {
            if (s == "train") return protein::Split::train;
            if (s == "test") return protein::Split::test;
            throw ConfigError("split must be 'train' or 'test'");
        });
        read_list(*it, "observe", f.observe, w);
        read(*it, "threads", f.threads, w);
        read(*it, "dump_reconstructions", f.dump_reconstructions, w);
    }
    if (auto it = doc.find("eval"); it != doc.end()) {
        const std::string w = "eval";
        check_keys(*it, {"shots", "n_seeds", "methods", "embedding", "max_queries", "baseline_epochs",
                         "baseline_learning_rate", "baseline_weight_decay", "baseline_hidden"},
                   w);
        auto& e = c.eval;
        read_list(*it, "shots", e.shots, w);
        read(*it, "n_seeds", e.n_seeds, w);
        read_list(*it, "methods", e.methods, w);
        read_enum(*it, "embedding", e.embedding, w, [](const std::string& s) {
            if (s == "posterior_mean") return eval::EmbeddingPath::posterior_mean;
            if (s == "fusion") return eval::EmbeddingPath::fusion;
            throw ConfigError("embedding must be 'posterior_mean' or 'fusion'");
        });
        read(*it, "max_queries", e.max_queries, w);
        read(*it, "baseline_epochs", e.baseline.epochs, w);
        read(*it, "baseline_learning_rate", e.baseline.learning_rate, w);
        read(*it, "baseline_weight_decay", e.baseline.weight_decay, w);
        read(*it, "baseline_hidden", e.baseline.hidden, w);
    }
    if (auto it = doc.find("sweep"); it != doc.end()) {
        const std::string w = "sweep";
        check_keys(*it, {"axis", "values"}, w);
        read_enum(*it, "axis", c.sweep.axis, w, sweep_axis_from_string);
        read_list(*it, "values", c.sweep.values, w);
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return merge_config(std::move(base), doc);
}

json to_json(const ExperimentConfig& c) {
    json samplers = json::array();
    for (const auto& s : c.samplers) samplers.push_back(sampler_json(s));
    const auto& d = c.dataset;
    const auto& t = c.mvae_train;
    const auto& f = c.fusion;
    const auto& e = c.eval;
    json observe = json::array();
    for (bool b : f.observe) observe.push_back(b);
    return {
        {"version", kConfigVersion},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"dataset",
         {{"path", d.path},
          {"n_samples", d.n_samples},
          {"signal_dim", d.generator.signal_dim},
          {"n_modalities", d.generator.n_modalities},
          {"latent_dim", d.prior.latent_dim},
          {"n_components", d.prior.n_components},
          {"spread", d.prior.spread},
          {"component_std", d.prior.component_std},
          {"max_redraws", d.prior.max_redraws},
          {"weight_std", d.generator.weight_std},
          {"bias_std", d.generator.bias_std}}},
        {"mvae_train",
         {{"checkpoint", t.checkpoint},
          {"epochs", t.train.epochs},
          {"batch_size", t.train.batch_size},
          {"learning_rate", t.train.learning_rate},
          {"kl_scale", t.train.kl_scale},
          {"posterior_mode", mvae::to_string(t.train.posterior_mode)},
          {"modality_dropout_prob", t.train.modality_dropout_prob},
          {"grad_clip", t.train.grad_clip},
          {"latent_dim", t.shape.latent_dim},
          {"hidden", t.shape.hidden},
          {"resume", t.resume}}},
        {"samplers", samplers},
        {"fusion",
         {{"prior_weight", f.fusion.prior_weight},
          {"modality_weights", f.fusion.modality_weights},
          {"optimizer", numkit::to_string(f.fusion.optimizer)},
          {"learning_rate", f.fusion.learning_rate},
          {"modality_learning_rates", f.fusion.modality_learning_rates},
          {"prior_learning_rate", f.fusion.prior_learning_rate},
          {"max_iters", f.fusion.max_iters},
          {"tol", f.fusion.tol},
          {"window", f.fusion.window},
          {"n_restarts", f.fusion.n_restarts},
          {"inner_steps", f.fusion.inner_steps},
          {"impute_init", f.fusion.impute_init},
          {"n_samples", f.n_samples},
          {"split", f.split == protein::Split::train ? "train" : "test"},
          {"observe", observe},
          {"threads", f.threads},
          {"dump_reconstructions", f.dump_reconstructions}}},
        {"eval",
         {{"shots", e.shots},
          {"n_seeds", e.n_seeds},
          {"methods", e.methods},
          {"embedding", e.embedding == eval::EmbeddingPath::fusion ? "fusion" : "posterior_mean"},
          {"max_queries", e.max_queries},
          {"baseline_epochs", e.baseline.epochs},
          {"baseline_learning_rate", e.baseline.learning_rate},
          {"baseline_weight_decay", e.baseline.weight_decay},
          {"baseline_hidden", e.baseline.hidden}}},
        {"sweep", {{"axis", to_string(c.sweep.axis)}, {"values", c.sweep.values}}},
    };
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(to_json(config).dump()); }

std::vector<samplers::SamplerSpec> ExperimentConfig::sampler_specs() const {
    auto specs = samplers;
    for (std::size_t m = 0; m < specs.size(); ++m) {
        if (specs[m].seed == 0) specs[m].seed = numkit::splitmix64(seed ^ (0x5341ULL + m)) | 1ULL;
    }
    return specs;
}

std::optional<std::uint64_t> env_seed() {
    const char* raw = std::getenv("LATENTFUSE_SEED");
    if (raw == nullptr || *raw == '\0') return std::nullopt;
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(raw, &end, 10);
    if (errno != 0 || *end != '\0' || raw[0] == '-') {
        throw ConfigError(std::string("LATENTFUSE_SEED is not a non-negative integer: ") + raw);
    }
    return static_cast<std::uint64_t>(v);
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (output_dir.empty()) fail("output_dir must not be empty");
    const auto& g = dataset.generator;
    const auto& p = dataset.prior;
    if (dataset.n_samples < 1) fail("dataset.n_samples must be at least 1");
    if (g.signal_dim < 1 || g.n_modalities < 1) fail("dataset.signal_dim and dataset.n_modalities must be positive");
    if (p.latent_dim < 1 || p.n_components < 1) fail("dataset.latent_dim and dataset.n_components must be positive");
    if (!(p.spread >= 0.0) || !(p.component_std > 0.0)) fail("dataset.spread must be >= 0 and component_std > 0");
    if (!(g.weight_std >= 0.0) || !(g.bias_std >= 0.0)) fail("generator standard deviations must be non-negative");
    if (samplers.size() != g.n_modalities) {
        fail("samplers must list one entry per modality (" + std::to_string(g.n_modalities) + ")");
    }
    for (std::size_t m = 0; m < samplers.size(); ++m) {
        try {
            samplers[m].validate(g.signal_dim);
        } catch (const std::invalid_argument& e) {
            fail("samplers[" + std::to_string(m) + "]: " + e.what());
        }
    }
    const auto& t = mvae_train.train;
    if (t.epochs < 0) fail("mvae_train.epochs must be non-negative");
    if (t.batch_size < 1) fail("mvae_train.batch_size must be positive");
    if (!(t.learning_rate > 0.0)) fail("mvae_train.learning_rate must be positive");
    if (!(t.kl_scale >= 0.0)) fail("mvae_train.kl_scale must be non-negative");
    if (!(t.modality_dropout_prob >= 0.0 && t.modality_dropout_prob < 1.0)) {
        fail("mvae_train.modality_dropout_prob must be in [0, 1)");
    }
    if (!(t.grad_clip > 0.0)) fail("mvae_train.grad_clip must be positive");
    if (mvae_train.shape.latent_dim < 1 || mvae_train.shape.hidden < 1) {
        fail("mvae_train.latent_dim and mvae_train.hidden must be positive");
    }
    try {
        fusion.fusion.validate();
    } catch (const std::invalid_argument& e) {
        fail(std::string("fusion: ") + e.what());
    }
    if (!fusion.fusion.modality_weights.empty() && fusion.fusion.modality_weights.size() != g.n_modalities) {
        fail("fusion.modality_weights must have one entry per modality");
    }
    if (!fusion.fusion.modality_learning_rates.empty() &&
        fusion.fusion.modality_learning_rates.size() != g.n_modalities) {
        fail("fusion.modality_learning_rates must have one entry per modality");
    }
    if (fusion.n_samples < 1) fail("fusion.n_samples must be at least 1");
    if (!fusion.observe.empty()) {
        if (fusion.observe.size() != g.n_modalities) fail("fusion.observe must have one entry per modality");
    }
    if (fusion.threads < 1) fail("fusion.threads must be at least 1");
    if (eval.shots.empty()) fail("eval.shots must not be empty");
    for (int s : eval.shots)
        if (s < 1) fail("eval.shots entries must be positive (an empty support set cannot be classified)");
    if (eval.n_seeds < 1) fail("eval.n_seeds must be at least 1");
    if (eval.methods.empty()) fail("eval.methods must not be empty");
    for (const auto& m : eval.methods) {
        if (m == "sflr") continue;
        try {
            (void)eval::baseline_kind_from_string(m);
        } catch (const std::invalid_argument&) {
            fail("eval.methods: unknown method '" + m + "'");
        }
    }
    if (eval.baseline.epochs < 0 || !(eval.baseline.learning_rate > 0.0) || !(eval.baseline.weight_decay >= 0.0) ||
        eval.baseline.hidden < 1) {
        fail("eval baseline settings are invalid");
    }
    if (sweep.values.empty()) fail("sweep.values must not be empty");
    for (double v : sweep.values) {
        switch (sweep.axis) {
            case SweepAxis::n_measurements:
                if (v != std::floor(v) || v < 1 || v > static_cast<double>(g.signal_dim)) {
                    fail("sweep n_measurements values must be integers in [1, " + std::to_string(g.signal_dim) + "]");
                }
                break;
            case SweepAxis::noise_std:
                if (!(v >= 0.0) || !std::isfinite(v)) fail("sweep noise_std values must be non-negative");
                break;
            case SweepAxis::missing_ratio:
                if (!(v >= 0.0 && v <= 1.0)) fail("sweep missing_ratio values must be in [0, 1]");
                break;
            case SweepAxis::shots:
                if (v != std::floor(v) || v < 1) fail("sweep shots values must be positive integers");
                break;
        }
    }
}

}  // namespace latentfuse::cli
