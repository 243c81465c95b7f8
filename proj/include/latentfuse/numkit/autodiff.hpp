#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "latentfuse/numkit/tensor.hpp"

namespace latentfuse::numkit {

class Tape;

/// Handle to a node recorded on a Tape. Valid until the tape is reset.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr && id_ >= 0; }

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted and backward() is a single reverse
/// sweep. Single-owner; not thread safe.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape();

    /// Leaf holding a copy of `value`. Receives no gradient.
    Var constant(Tensor value);
    /// Leaf referring to an external tensor that must outlive the tape's
    /// current recording. Receives no gradient.
    Var constant_ref(const Tensor& value);
    /// Trainable leaf: after backward() the gradient is accumulated into
    /// `tensor.grad()`.
    Var param(Tensor& tensor);

    /// Reverse sweep from a scalar loss, accumulating into every param
    /// tensor that participated, then clears the tape.
    void backward(const Var& loss);
    void reset();

    std::size_t size() const { return nodes_.size(); }

    // Op-author interface.
    Var record(Tensor value, std::initializer_list<int> inputs, BackwardFn fn, const char* name);
    const Tensor& value(int id) const;
    std::span<const double> grad(int id) const { return nodes_[id].grad; }
    /// Gradient buffer of `id` for accumulation, or an empty span when the
    /// node does not need a gradient.
    std::span<double> accum(int id);
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor* param = nullptr;
        std::vector<double> grad;
        BackwardFn backward;
        bool requires_grad = false;
    };

    void release_params();

    std::vector<Node> nodes_;
};

// Recording ops. Binary elementwise ops broadcast dimensions of size 1.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
/// Clamp into [lo, hi]; gradient passes only strictly inside the range.
Var clamp(const Var& a, double lo, double hi);
/// Sum of all entries (1x1).
Var sum(const Var& a);
/// Mean of all entries (1x1).
Var mean(const Var& a);
/// Per-row sums (Rx1).
Var row_sum(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
/// Mean negative log-softmax likelihood of integer labels, one per row.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace latentfuse::numkit
