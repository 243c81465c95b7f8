#include <algorithm>
#include <cmath>
#include <numeric>

#include "latentfuse/mvae/model.hpp"

namespace latentfuse::mvae {

namespace nk = latentfuse::numkit;

namespace {

std::size_t present_count(const Batch& batch) {
    return static_cast<std::size_t>(std::count(batch.present.begin(), batch.present.end(), true));
}

// Sum over modalities of per-row squared reconstruction error, Rx1.
Var reconstruction(MvaeModel& model, const Batch& batch, const Var& z) {
    Tape& tape = *z.tape();
    Var total;
    for (std::size_t m = 0; m < batch.n_modalities(); ++m) {
        // Reconstruction covers every modality; dropped ones are targets only.
        Var target = tape.constant_ref(batch.signals[m]);
        Var err = nk::row_sum(nk::square(nk::sub(target, model.decode_var(z, m))));
        total = total.valid() ? nk::add(total, err) : err;
    }
    return total;
}

}  // namespace

ElboNoise draw_elbo_noise(const MvaeModel& model, const Batch& batch, Rng& rng) {
    const std::size_t n = model.mode() == PosteriorMode::moe ? present_count(batch) : 1;
    ElboNoise noise;
    for (std::size_t k = 0; k < n; ++k)
        noise.push_back(nk::rng_gaussian(rng, batch.rows(), model.shape().latent_dim, 0.0, 1.0));
    return noise;
}

Var elbo_loss(Tape& tape, MvaeModel& model, const Batch& batch, const ElboNoise& noise, double beta) {
    if (batch.n_modalities() != model.shape().n_modalities) {
        throw nk::ShapeError("batch modality count does not match model");
    }
    if (present_count(batch) == 0) throw MissingModalityError("ELBO needs at least one present modality");
    if (!(beta >= 0.0)) throw std::invalid_argument("KL scale must be non-negative");

    std::vector<Var> inputs;
    std::vector<LatentVars> experts;
    for (std::size_t m = 0; m < batch.n_modalities(); ++m) {
        if (!batch.present[m]) {
            if (model.mode() == PosteriorMode::joint) {
                throw MissingModalityError("joint encoder requires every modality; modality " +
                                           std::to_string(m + 1) + " is missing");
            }
            continue;
        }
        Var x = tape.constant_ref(batch.signals[m]);
        inputs.push_back(x);
        if (model.mode() != PosteriorMode::joint) experts.push_back(model.encode_vars(x, m));
    }

    Var per_row;
    switch (model.mode()) {
        case PosteriorMode::joint:
        case PosteriorMode::poe: {
            const LatentVars q = model.mode() == PosteriorMode::joint
                                     ? model.encode_joint_vars(inputs)
                                     : poe_combine(experts, true);
            Var z = reparam_sample(q, noise.at(0));
            per_row = nk::add(reconstruction(model, batch, z), nk::scale(kl_standard_normal(q), beta));
            break;
        }
        case PosteriorMode::moe: {
            if (noise.size() != experts.size()) throw std::invalid_argument("MoE needs one noise draw per expert");
            for (std::size_t k = 0; k < experts.size(); ++k) {
                Var z = reparam_sample(experts[k], noise[k]);
                Var term = nk::add(reconstruction(model, batch, z), nk::scale(kl_standard_normal(experts[k]), beta));
                per_row = per_row.valid() ? nk::add(per_row, term) : term;
            }
            per_row = nk::scale(per_row, 1.0 / static_cast<double>(experts.size()));
            break;
        }
    }
    return nk::mean(per_row);
}

Var elbo_loss(Tape& tape, MvaeModel& model, const Batch& batch, Rng& rng, double beta) {
    return elbo_loss(tape, model, batch, draw_elbo_noise(model, batch, rng), beta);
}

TrainResult train(MvaeModel& model, const protein::ProteinDataset& data, const TrainConfig& config,
                  std::optional<TrainState> resume) {
    if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(config.kl_scale >= 0.0)) throw std::invalid_argument("kl_scale must be non-negative");
    if (config.posterior_mode != model.mode()) throw std::invalid_argument("config posterior mode differs from model");
    const auto ordered_rows = data.indices(protein::Split::train);
    if (ordered_rows.empty()) throw std::invalid_argument("training split is empty");

    TrainResult result;
    if (resume) {
        result.state = std::move(*resume);
    } else {
        result.state.optim.kind = nk::OptimizerKind::adam;
        result.state.optim.learning_rate = config.learning_rate;
    }
    auto params = model.parameters();
    const Rng base(config.seed, 0x747261696eULL);

    double initial = 0.0;
    int over_limit = 0;
    Tape tape;
    for (int e = 0; e < config.epochs; ++e) {
        const int epoch = result.state.epochs_done;
        Rng rng = base.split(static_cast<std::uint64_t>(epoch));
        // Each epoch shuffles from the sorted order so resumed runs match.
        auto train_rows = ordered_rows;
        for (std::size_t i = train_rows.size(); i > 1; --i) {
            std::swap(train_rows[i - 1], train_rows[rng.uniform_index(i)]);
        }
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < train_rows.size(); start += config.batch_size) {
            const std::size_t end = std::min(train_rows.size(), start + config.batch_size);
            const std::span<const std::size_t> rows(train_rows.data() + start, end - start);
            Batch batch = make_batch(data, rows);
            if (model.mode() == PosteriorMode::poe && batch.n_modalities() > 1) {
                do {
                    for (std::size_t m = 0; m < batch.n_modalities(); ++m)
                        batch.present[m] = rng.uniform() >= config.modality_dropout_prob;
                } while (present_count(batch) == 0);
            }
            const ElboNoise noise = draw_elbo_noise(model, batch, rng);
            nk::zero_grads(params);
            Var loss = elbo_loss(tape, model, batch, noise, config.kl_scale);
            epoch_sum += loss.value().item() * static_cast<double>(rows.size());
            tape.backward(loss);
            if (config.grad_clip > 0.0) nk::clip_grad_norm(params, config.grad_clip);
            nk::opt_step(result.state.optim, params);
        }
        const double epoch_loss = epoch_sum / static_cast<double>(ordered_rows.size());
        result.epoch_loss.push_back(epoch_loss);
        ++result.state.epochs_done;

        if (e == 0) initial = epoch_loss;
        over_limit = epoch_loss > 10.0 * initial ? over_limit + 1 : 0;
        if (over_limit >= 3) {
            throw DivergenceError("training diverged: loss above 10x its initial value for 3 epochs");
        }
    }
    return result;
}

}  // namespace latentfuse::mvae
