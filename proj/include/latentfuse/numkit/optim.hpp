#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentfuse/numkit/tensor.hpp"

namespace latentfuse::numkit {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First-order optimizer state. Moment buffers are created lazily on the
/// first step and must keep matching the parameter shapes afterwards.
struct OptimState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    AdamHyper adam;
    /// L2 penalty folded into the gradient (coupled weight decay).
    double weight_decay = 0.0;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

/// One update of `params` from their gradient buffers.
/// Parameters without a gradient buffer are treated as having zero gradient.
void opt_step(OptimState& state, std::span<Tensor* const> params);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor* const> params, double max_norm);

void zero_grads(std::span<Tensor* const> params);

}  // namespace latentfuse::numkit
