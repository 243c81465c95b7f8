#include "latentfuse/numkit/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace latentfuse::numkit {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + name + "'");
}

void opt_step(OptimState& state, std::span<Tensor* const> params) {
    if (!(state.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (state.kind == OptimizerKind::adam && state.first_moment.empty()) {
        for (const Tensor* p : params) {
            state.first_moment.emplace_back(p->size(), 0.0);
            state.second_moment.emplace_back(p->size(), 0.0);
        }
    }
    if (state.kind == OptimizerKind::adam && state.first_moment.size() != params.size()) {
        throw ShapeError("optimizer state tracks a different parameter list");
    }
    ++state.step;

    const double lr = state.learning_rate;
    const double wd = state.weight_decay;
    const auto& h = state.adam;
    const double bias1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));

    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        auto data = p.data();
        auto grad = p.grad();
        if (state.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * (grad[i] + wd * data[i]);
            continue;
        }
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (m.size() != data.size()) throw ShapeError("adam moment shape mismatch");
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i] + wd * data[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
            const double mhat = m[i] / bias1;
            const double vhat = v[i] / bias2;
            data[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
        }
    }
}

double clip_grad_norm(std::span<Tensor* const> params, double max_norm) {
    double sq = 0.0;
    for (Tensor* p : params)
        for (double g : p->grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (Tensor* p : params)
            for (double& g : p->grad()) g *= s;
    }
    return norm;
}

void zero_grads(std::span<Tensor* const> params) {
    for (Tensor* p : params) p->zero_grad();
}

}  // namespace latentfuse::numkit
