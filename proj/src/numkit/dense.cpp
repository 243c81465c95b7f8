#include "latentfuse/numkit/dense.hpp"

#include <cmath>

namespace latentfuse::numkit {

Dense::Dense(std::size_t in, std::size_t out) : weight(in, out), bias(1, out) {}

void Dense::init(Rng& rng) {
    const double std = 1.0 / std::sqrt(static_cast<double>(weight.rows()));
    for (double& w : weight.data()) w = rng.normal(0.0, std);
    for (double& b : bias.data()) b = 0.0;
}

Var Dense::forward(const Var& x, bool trainable) {
    if (!trainable) return forward_frozen(x);
    Tape& tape = *x.tape();
    return add(matmul(x, tape.param(weight)), tape.param(bias));
}

Var Dense::forward_frozen(const Var& x) const {
    Tape& tape = *x.tape();
    return add(matmul(x, tape.constant_ref(weight)), tape.constant_ref(bias));
}

}  // namespace latentfuse::numkit
