#include "latentfuse/fusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentfuse::fusion {

namespace nk = latentfuse::numkit;

void FusionConfig::validate() const {
    if (!(prior_weight >= 0.0)) throw std::invalid_argument("prior_weight must be non-negative");
    for (double w : modality_weights)
        if (!(w >= 0.0)) throw std::invalid_argument("modality weights must be non-negative");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    for (double r : modality_learning_rates)
        if (!(r > 0.0)) throw std::invalid_argument("modality learning rates must be positive");
    if (!(prior_learning_rate > 0.0)) throw std::invalid_argument("prior_learning_rate must be positive");
    if (max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
    if (n_restarts < 1) throw std::invalid_argument("n_restarts must be at least 1");
    if (inner_steps < 1) throw std::invalid_argument("inner_steps must be at least 1");
    if (window < 1) throw std::invalid_argument("convergence window must be at least 1");
    if (!(tol >= 0.0)) throw std::invalid_argument("tol must be non-negative");
}

std::vector<double> resolve_weights(const FusionConfig& config, std::span<const Sampler> samplers) {
    if (!config.modality_weights.empty()) {
        if (config.modality_weights.size() != samplers.size()) {
            throw std::invalid_argument("one modality weight per sampler required");
        }
        return config.modality_weights;
    }
    std::vector<double> w;
    for (const auto& s : samplers) {
        const double sigma = s.spec().noise_std;
        w.push_back(sigma > 0.0 ? 1.0 / (2.0 * sigma * sigma) : 1.0);
    }
    return w;
}

namespace {

void check_inputs(const ObservationSet& observations, const mvae::MvaeModel& model,
                  std::span<const Sampler> samplers, std::span<const double> weights) {
    const std::size_t m = model.shape().n_modalities;
    if (observations.size() != m || samplers.size() != m || weights.size() != m) {
        throw nk::ShapeError("observations, samplers and weights must cover every modality");
    }
    for (std::size_t k = 0; k < m; ++k) {
        if (samplers[k].signal_dim() != model.shape().signal_dim) {
            throw nk::ShapeError("sampler signal length differs from the model");
        }
        if (observations[k] && observations[k]->size() != samplers[k].output_dim()) {
            throw nk::ShapeError("observation length for modality " + std::to_string(k + 1) +
                                 " does not match its sampler");
        }
    }
}

// Prior term scaled by `prior_scale` plus data terms (only `only` when >= 0).
Var objective_rows(const Var& z, const ObservationSet& observations, const mvae::MvaeModel& model,
                   std::span<const Sampler> samplers, double prior_scale,
                   std::span<const double> weights, int only) {
    Tape& tape = *z.tape();
    Var total = nk::scale(nk::row_sum(nk::square(z)), prior_scale);
    for (std::size_t m = 0; m < observations.size(); ++m) {
        if (!observations[m] || (only >= 0 && static_cast<std::size_t>(only) != m)) continue;
        Var y = tape.constant(Tensor::row(*observations[m]));
        Var pred = samplers[m].measure(model.decode_frozen(z, m));
        Var term = nk::row_sum(nk::square(nk::sub(y, pred)));
        total = nk::add(total, nk::scale(term, weights[m]));
    }
    return total;
}

struct RestartOutcome {
    std::vector<double> z;
    std::vector<double> trace;
    bool converged = false;
    int iterations = 0;
};

bool window_converged(const std::vector<double>& trace, int window, double tol) {
    const std::size_t t = trace.size();
    if (t == 0) return false;
    if (trace.back() == 0.0) return true;
    if (t <= static_cast<std::size_t>(window)) return false;
    const double before = trace[t - 1 - static_cast<std::size_t>(window)];
    return std::abs(before - trace.back()) <= tol * std::abs(before);
}

// Runs every row of `z` as an independent restart. Rows are independent
// because the batched objective is a sum of per-row objectives and both
// optimizers act elementwise.
std::vector<RestartOutcome> run_block(Tensor z, const ObservationSet& observations,
                                      const mvae::MvaeModel& model, std::span<const Sampler> samplers,
                                      const FusionConfig& config, std::span<const double> weights) {
    const std::size_t rows = z.rows();
    std::vector<RestartOutcome> out(rows);
    std::vector<bool> active(rows, true);
    std::size_t n_active = rows;

    std::vector<std::size_t> present;
    for (std::size_t m = 0; m < observations.size(); ++m)
        if (observations[m]) present.push_back(m);

    std::vector<nk::OptimState> states(observations.size());
    for (std::size_t m = 0; m < states.size(); ++m) {
        states[m].kind = config.optimizer;
        states[m].learning_rate = config.learning_rate;
        if (config.optimizer == nk::OptimizerKind::sgd && !config.modality_learning_rates.empty()) {
            states[m].learning_rate = config.modality_learning_rates.at(m);
        }
    }
    // Prior-only objective when nothing is observed.
    nk::OptimState prior_state;
    prior_state.kind = config.optimizer;
    prior_state.learning_rate =
        config.optimizer == nk::OptimizerKind::sgd ? config.prior_learning_rate : config.learning_rate;

    Tape tape;
    Tensor* const params[] = {&z};
    auto take_step = [&](nk::OptimState& state, int only, double prior_scale) {
        z.zero_grad();
        Var zv = tape.param(z);
        Var loss = nk::sum(objective_rows(zv, observations, model, samplers, prior_scale, weights, only));
        tape.backward(loss);
        const Tensor before = z;
        nk::opt_step(state, params);
        for (std::size_t r = 0; r < rows; ++r)
            if (!active[r]) std::copy(before.row_span(r).begin(), before.row_span(r).end(), z.row_span(r).begin());
    };

    for (int it = 1; it <= config.max_iters && n_active > 0; ++it) {
        if (present.empty()) {
            take_step(prior_state, -1, config.prior_weight);
        }
        for (std::size_t m : present) {
            auto& state = states[m];
            // SGD update: z -= eta_0 lambda_0 grad||z||^2 + eta_m lambda_m grad(term_m).
            const double prior_scale = config.optimizer == nk::OptimizerKind::sgd
                                           ? config.prior_weight * config.prior_learning_rate / state.learning_rate
                                           : config.prior_weight;
            for (int s = 0; s < config.inner_steps; ++s) take_step(state, static_cast<int>(m), prior_scale);
        }
        for (std::size_t r = 0; r < rows; ++r) {
            if (!active[r]) continue;
            const double loss = fusion_objective(z.row_span(r), observations, model, samplers,
                                                 config.prior_weight, weights);
            if (!std::isfinite(loss)) throw nk::NumericalError("non-finite fusion objective");
            out[r].trace.push_back(loss);
            out[r].iterations = it;
            if (window_converged(out[r].trace, config.window, config.tol)) {
                out[r].converged = true;
                active[r] = false;
                --n_active;
            }
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        out[r].z.assign(z.row_span(r).begin(), z.row_span(r).end());
        if (out[r].trace.empty()) {
            out[r].trace.push_back(fusion_objective(out[r].z, observations, model, samplers,
                                                    config.prior_weight, weights));
        }
    }
    return out;
}

// Encoder posterior for initialisation, when identity observations allow it.
std::optional<mvae::GaussianLatent> imputation_posterior(const ObservationSet& observations,
                                                         const mvae::MvaeModel& model,
                                                         std::span<const Sampler> samplers) {
    std::vector<std::span<const double>> xs(observations.size());
    std::size_t n_full = 0;
    for (std::size_t m = 0; m < observations.size(); ++m) {
        if (observations[m] && samplers[m].spec().kind == samplers::SamplerKind::identity) {
            xs[m] = *observations[m];
            ++n_full;
        }
    }
    if (n_full == 0) return std::nullopt;
    if (model.mode() == mvae::PosteriorMode::joint) {
        if (n_full != observations.size()) return std::nullopt;
        return model.encode_joint(xs);
    }
    const auto experts = model.experts(xs);
    return mvae::poe_combine(experts, true, model.shape().latent_dim);
}

}  // namespace

Var fusion_loss_rows(const Var& z, const ObservationSet& observations, const mvae::MvaeModel& model,
                     std::span<const Sampler> samplers, double prior_weight,
                     std::span<const double> weights) {
    check_inputs(observations, model, samplers, weights);
    if (z.cols() != model.shape().latent_dim) throw nk::ShapeError("latent width differs from the model");
    return objective_rows(z, observations, model, samplers, prior_weight, weights, -1);
}

Var fusion_loss(const Var& z, const ObservationSet& observations, const mvae::MvaeModel& model,
                std::span<const Sampler> samplers, double prior_weight, std::span<const double> weights) {
    return nk::sum(fusion_loss_rows(z, observations, model, samplers, prior_weight, weights));
}

double fusion_objective(std::span<const double> z, const ObservationSet& observations,
                        const mvae::MvaeModel& model, std::span<const Sampler> samplers,
                        double prior_weight, std::span<const double> weights) {
    check_inputs(observations, model, samplers, weights);
    if (z.size() != model.shape().latent_dim) throw nk::ShapeError("latent width differs from the model");
    double loss = 0.0;
    for (double v : z) loss += v * v;
    loss *= prior_weight;
    for (std::size_t m = 0; m < observations.size(); ++m) {
        if (!observations[m]) continue;
        const auto pred = samplers[m].measure(model.decode(z, m));
        const auto& y = *observations[m];
        double term = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) term += (y[i] - pred[i]) * (y[i] - pred[i]);
        loss += weights[m] * term;
    }
    return loss;
}

FusionResult sflr_fuse(const ObservationSet& observations, const mvae::MvaeModel& model,
                       std::span<const Sampler> samplers, const FusionConfig& config, Rng& rng) {
    config.validate();
    const auto weights = resolve_weights(config, samplers);
    check_inputs(observations, model, samplers, weights);
    const std::size_t d = model.shape().latent_dim;
    const auto restarts = static_cast<std::size_t>(config.n_restarts);

    std::optional<mvae::GaussianLatent> init;
    if (config.impute_init) init = imputation_posterior(observations, model, samplers);
    Tensor z0(restarts, d);
    for (std::size_t r = 0; r < restarts; ++r) {
        Rng stream = rng.split(r);
        auto row = z0.row_span(r);
        if (init) {
            const auto z = mvae::reparam_sample(*init, stream);
            std::copy(z.begin(), z.end(), row.begin());
        } else {
            for (double& v : row) v = stream.normal();
        }
    }

    std::vector<std::optional<RestartOutcome>> outcomes(restarts);
    try {
        auto block = run_block(z0, observations, model, samplers, config, weights);
        for (std::size_t r = 0; r < restarts; ++r) outcomes[r] = std::move(block[r]);
    } catch (const nk::NumericalError&) {
        // Isolate the failing restarts; the others are unaffected.
        for (std::size_t r = 0; r < restarts; ++r) {
            try {
                auto single = run_block(z0.row_copy(r), observations, model, samplers, config, weights);
                outcomes[r] = std::move(single[0]);
            } catch (const nk::NumericalError&) {
                outcomes[r].reset();
            }
        }
    }

    FusionResult result;
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t r = 0; r < restarts; ++r) {
        if (!outcomes[r]) {
            result.restart_losses.push_back(std::numeric_limits<double>::infinity());
            ++result.failed_restarts;
            continue;
        }
        const double loss = outcomes[r]->trace.back();
        result.restart_losses.push_back(loss);
        if (!any || loss < best) {
            best = loss;
            result.best_restart = r;
            any = true;
        }
    }
    if (!any) throw FusionError("all fusion restarts diverged");

    auto& win = *outcomes[result.best_restart];
    result.z_map = win.z;
    result.loss_trace = win.trace;
    result.converged = win.converged;
    result.iterations = win.iterations;
    for (std::size_t m = 0; m < model.shape().n_modalities; ++m) {
        result.reconstructions.push_back(model.decode(result.z_map, m));
    }
    return result;
}

}  // namespace latentfuse::fusion
