#include "latentfuse/mvae/model.hpp"

#include <algorithm>
#include <cmath>

namespace latentfuse::mvae {

namespace nk = latentfuse::numkit;

std::string to_string(PosteriorMode mode) {
    switch (mode) {
        case PosteriorMode::joint: return "joint";
        case PosteriorMode::poe: return "poe";
        case PosteriorMode::moe: return "moe";
    }
    return "?";
}

PosteriorMode posterior_mode_from_string(const std::string& name) {
    if (name == "joint") return PosteriorMode::joint;
    if (name == "poe") return PosteriorMode::poe;
    if (name == "moe") return PosteriorMode::moe;
    throw std::invalid_argument("unknown posterior mode '" + name + "'");
}

Var Mlp::forward(const Var& x, bool trainable) {
    return output.forward(nk::tanh(hidden.forward(x, trainable)), trainable);
}

Var Mlp::forward_frozen(const Var& x) const {
    return output.forward_frozen(nk::tanh(hidden.forward_frozen(x)));
}

Var Mlp::embed(const Var& x, bool trainable) { return nk::tanh(hidden.forward(x, trainable)); }

namespace {

// Plain evaluation of a Dense layer on one input row.
std::vector<double> dense_eval(const nk::Dense& layer, std::span<const double> x, bool apply_tanh) {
    if (x.size() != layer.in_dim()) throw nk::ShapeError("layer input size mismatch");
    std::vector<double> y(layer.bias.data().begin(), layer.bias.data().end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto w = layer.weight.row_span(i);
        for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[i] * w[j];
    }
    if (apply_tanh)
        for (double& v : y) v = std::tanh(v);
    return y;
}

std::vector<double> mlp_eval(const Mlp& mlp, std::span<const double> x) {
    return dense_eval(mlp.output, dense_eval(mlp.hidden, x, true), false);
}

GaussianLatent split_latent(const std::vector<double>& out, std::size_t d) {
    GaussianLatent q;
    q.mean.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d));
    q.logvar.assign(out.begin() + static_cast<std::ptrdiff_t>(d), out.end());
    q.clamp();
    return q;
}

LatentVars split_latent(const Var& out, std::size_t d) {
    return {nk::slice_cols(out, 0, d), nk::clamp(nk::slice_cols(out, d, d), kLogvarMin, kLogvarMax)};
}

}  // namespace

std::size_t Batch::rows() const {
    for (std::size_t m = 0; m < signals.size(); ++m)
        if (present[m]) return signals[m].rows();
    return 0;
}

Batch make_batch(const protein::ProteinDataset& data, std::span<const std::size_t> rows) {
    Batch b;
    for (std::size_t m = 0; m < data.n_modalities(); ++m) {
        b.signals.push_back(data.gather(m, rows));
        b.present.push_back(true);
    }
    return b;
}

MvaeModel MvaeModel::create(const ModelShape& shape, PosteriorMode mode, Rng& rng) {
    if (shape.n_modalities == 0 || shape.signal_dim == 0 || shape.latent_dim == 0 || shape.hidden == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    MvaeModel model;
    model.shape_ = shape;
    model.mode_ = mode;
    const std::size_t d = shape.latent_dim;
    if (mode == PosteriorMode::joint) {
        model.joint_encoder_ = Mlp(shape.signal_dim * shape.n_modalities, shape.hidden, 2 * d);
        model.joint_encoder_.init(rng);
    } else {
        for (std::size_t m = 0; m < shape.n_modalities; ++m) {
            model.encoders_.emplace_back(shape.signal_dim, shape.hidden, 2 * d);
            model.encoders_.back().init(rng);
        }
    }
    for (std::size_t m = 0; m < shape.n_modalities; ++m) {
        model.decoders_.emplace_back(d, shape.hidden, shape.signal_dim);
        model.decoders_.back().init(rng);
    }
    return model;
}

std::vector<std::pair<std::string, Tensor*>> MvaeModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_mlp = [&out](const std::string& prefix, Mlp& mlp) {
        out.emplace_back(prefix + ".hidden.weight", &mlp.hidden.weight);
        out.emplace_back(prefix + ".hidden.bias", &mlp.hidden.bias);
        out.emplace_back(prefix + ".output.weight", &mlp.output.weight);
        out.emplace_back(prefix + ".output.bias", &mlp.output.bias);
    };
    if (mode_ == PosteriorMode::joint) add_mlp("joint_encoder", joint_encoder_);
    for (std::size_t m = 0; m < encoders_.size(); ++m) add_mlp("encoder" + std::to_string(m), encoders_[m]);
    for (std::size_t m = 0; m < decoders_.size(); ++m) add_mlp("decoder" + std::to_string(m), decoders_[m]);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> MvaeModel::named_parameters() const {
    auto named = const_cast<MvaeModel*>(this)->named_parameters();
    return {named.begin(), named.end()};
}

std::vector<Tensor*> MvaeModel::parameters() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::size_t MvaeModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t->size();
    return n;
}

GaussianLatent MvaeModel::encode(std::span<const double> x, std::size_t modality) const {
    if (mode_ == PosteriorMode::joint) {
        throw MissingModalityError("joint-encoder model has no unimodal experts");
    }
    if (modality >= encoders_.size()) throw std::out_of_range("modality index out of range");
    if (x.size() != shape_.signal_dim) throw nk::ShapeError("encode: signal length mismatch");
    return split_latent(mlp_eval(encoders_[modality], x), shape_.latent_dim);
}

GaussianLatent MvaeModel::encode_joint(std::span<const std::span<const double>> xs) const {
    if (mode_ != PosteriorMode::joint) throw std::logic_error("model has no joint encoder");
    if (xs.size() != shape_.n_modalities) throw nk::ShapeError("encode_joint: modality count mismatch");
    std::vector<double> concat;
    for (std::size_t m = 0; m < xs.size(); ++m) {
        if (xs[m].empty()) {
            throw MissingModalityError("joint encoder requires every modality; modality " +
                                       std::to_string(m + 1) + " is missing");
        }
        if (xs[m].size() != shape_.signal_dim) throw nk::ShapeError("encode_joint: signal length mismatch");
        concat.insert(concat.end(), xs[m].begin(), xs[m].end());
    }
    return split_latent(mlp_eval(joint_encoder_, concat), shape_.latent_dim);
}

std::vector<GaussianLatent> MvaeModel::experts(std::span<const std::span<const double>> xs) const {
    if (xs.size() != shape_.n_modalities) throw nk::ShapeError("modality count mismatch");
    std::vector<GaussianLatent> out;
    for (std::size_t m = 0; m < xs.size(); ++m)
        if (!xs[m].empty()) out.push_back(encode(xs[m], m));
    return out;
}

GaussianLatent MvaeModel::posterior(std::span<const std::span<const double>> xs) const {
    switch (mode_) {
        case PosteriorMode::joint: return encode_joint(xs);
        case PosteriorMode::poe: {
            const auto e = experts(xs);
            return poe_combine(e, true, shape_.latent_dim);
        }
        case PosteriorMode::moe:
            throw std::logic_error("mixture posterior is not Gaussian; use experts() with moe_combine");
    }
    return {};
}

std::vector<double> MvaeModel::posterior_mean(std::span<const std::span<const double>> xs) const {
    if (mode_ == PosteriorMode::moe) {
        const auto e = experts(xs);
        if (e.empty()) throw MissingModalityError("no modality present");
        return moe_combine(e).mean();
    }
    return posterior(xs).mean;
}

std::vector<double> MvaeModel::decode(std::span<const double> z, std::size_t modality) const {
    if (z.size() != shape_.latent_dim) throw nk::ShapeError("decode: latent length mismatch");
    return mlp_eval(decoders_.at(modality), z);
}

LatentVars MvaeModel::encode_vars(const Var& x, std::size_t modality, bool trainable) {
    if (mode_ == PosteriorMode::joint) {
        throw MissingModalityError("joint-encoder model has no unimodal experts");
    }
    return split_latent(encoders_.at(modality).forward(x, trainable), shape_.latent_dim);
}

LatentVars MvaeModel::encode_joint_vars(std::span<const Var> xs, bool trainable) {
    Var concat = xs[0];
    for (std::size_t m = 1; m < xs.size(); ++m) concat = nk::concat_cols(concat, xs[m]);
    return split_latent(joint_encoder_.forward(concat, trainable), shape_.latent_dim);
}

Var MvaeModel::decode_var(const Var& z, std::size_t modality, bool trainable) {
    return decoders_.at(modality).forward(z, trainable);
}

Var MvaeModel::decode_frozen(const Var& z, std::size_t modality) const {
    return decoders_.at(modality).forward_frozen(z);
}

}  // namespace latentfuse::mvae
