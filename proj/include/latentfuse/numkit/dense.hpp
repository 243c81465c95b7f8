#pragma once

#include <cstddef>
#include <vector>

#include "latentfuse/numkit/autodiff.hpp"
#include "latentfuse/numkit/rng.hpp"

namespace latentfuse::numkit {

/// Fully connected layer y = x W + b with W stored in x out.
struct Dense {
    Tensor weight;
    Tensor bias;

    Dense() = default;
    Dense(std::size_t in, std::size_t out);

    std::size_t in_dim() const { return weight.rows(); }
    std::size_t out_dim() const { return weight.cols(); }

    /// Weights ~ N(0, 1/in), zero bias.
    void init(Rng& rng);

    /// Records the layer on the input's tape. When `trainable` is false the
    /// weights enter as constants and receive no gradient.
    Var forward(const Var& x, bool trainable = true);
    Var forward_frozen(const Var& x) const;

    void collect(std::vector<Tensor*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
};

}  // namespace latentfuse::numkit
