#include "latentfuse/numkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentfuse::numkit {

const Tensor& Var::value() const { return tape_->value(id_); }

Tape::~Tape() { release_params(); }

void Tape::release_params() {
    for (auto& n : nodes_)
        if (n.param != nullptr) n.param->node_id_ = -1;
}

Var Tape::constant(Tensor value) {
    require_finite(value, "constant");
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant_ref(const Tensor& value) {
    require_finite(value, "constant");
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Tensor& tensor) {
    const int existing = tensor.node_id_;
    if (existing >= 0 && static_cast<std::size_t>(existing) < nodes_.size() &&
        nodes_[existing].param == &tensor) {
        return Var(this, existing);
    }
    require_finite(tensor, "parameter");
    Node n;
    n.external = &tensor;
    n.param = &tensor;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    tensor.node_id_ = id;
    return Var(this, id);
}

Var Tape::record(Tensor value, std::initializer_list<int> inputs, BackwardFn fn, const char* name) {
    require_finite(value, name);
    Node n;
    n.owned = std::move(value);
    for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Tape::value(int id) const {
    const auto& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.owned;
}

std::span<double> Tape::accum(int id) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
    return n.grad;
}

void Tape::backward(const Var& loss) {
    if (loss.tape() != this) throw std::invalid_argument("loss does not belong to this tape");
    if (value(loss.id()).size() != 1) {
        throw ShapeError("backward() requires a scalar loss, got " + shape_string(value(loss.id())));
    }
    auto seed = accum(loss.id());
    if (!seed.empty()) seed[0] += 1.0;
    for (int i = loss.id(); i >= 0; --i) {
        auto& n = nodes_[i];
        if (n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.param != nullptr) {
            auto g = n.param->grad();
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
        }
    }
    reset();
}

void Tape::reset() {
    release_params();
    nodes_.clear();
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw std::invalid_argument("operands recorded on different tapes");
    }
    return *a.tape();
}

std::size_t broadcast_dim(std::size_t x, std::size_t y, const Tensor& a, const Tensor& b,
                          const char* op) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                     shape_string(b));
}

// Visits every output element with the broadcast source indices.
template <class F>
void for_broadcast(const Tensor& a, const Tensor& b, std::size_t rows, std::size_t cols, F&& f) {
    const bool ar = a.rows() == 1, ac = a.cols() == 1;
    const bool br = b.rows() == 1, bc = b.cols() == 1;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t ra = ar ? 0 : r, rb = br ? 0 : r;
        for (std::size_t c = 0; c < cols; ++c) {
            f(r * cols + c, ra * a.cols() + (ac ? 0 : c), rb * b.cols() + (bc ? 0 : c));
        }
    }
}

enum class BinOp { add, sub, mul, div };

Var binary(const Var& av, const Var& bv, BinOp op, const char* name) {
    Tape& tape = same_tape(av, bv);
    const Tensor& a = av.value();
    const Tensor& b = bv.value();
    const std::size_t rows = broadcast_dim(a.rows(), b.rows(), a, b, name);
    const std::size_t cols = broadcast_dim(a.cols(), b.cols(), a, b, name);
    Tensor out(rows, cols);
    auto po = out.data();
    auto pa = a.data();
    auto pb = b.data();
    for_broadcast(a, b, rows, cols, [&](std::size_t o, std::size_t i, std::size_t j) {
        switch (op) {
            case BinOp::add: po[o] = pa[i] + pb[j]; break;
            case BinOp::sub: po[o] = pa[i] - pb[j]; break;
            case BinOp::mul: po[o] = pa[i] * pb[j]; break;
            case BinOp::div:
                if (pb[j] == 0.0) throw NumericalError("division by zero");
                po[o] = pa[i] / pb[j];
                break;
        }
    });
    const int ia = av.id(), ib = bv.id();
    return tape.record(
        std::move(out), {ia, ib},
        [ia, ib, op, rows, cols](Tape& t, int self) {
            const Tensor& a = t.value(ia);
            const Tensor& b = t.value(ib);
            auto g = t.grad(self);
            auto ga = t.accum(ia);
            auto gb = t.accum(ib);
            auto pa = a.data();
            auto pb = b.data();
            for_broadcast(a, b, rows, cols, [&](std::size_t o, std::size_t i, std::size_t j) {
                switch (op) {
                    case BinOp::add:
                        if (!ga.empty()) ga[i] += g[o];
                        if (!gb.empty()) gb[j] += g[o];
                        break;
                    case BinOp::sub:
                        if (!ga.empty()) ga[i] += g[o];
                        if (!gb.empty()) gb[j] -= g[o];
                        break;
                    case BinOp::mul:
                        if (!ga.empty()) ga[i] += g[o] * pb[j];
                        if (!gb.empty()) gb[j] += g[o] * pa[i];
                        break;
                    case BinOp::div:
                        if (!ga.empty()) ga[i] += g[o] / pb[j];
                        if (!gb.empty()) gb[j] -= g[o] * pa[i] / (pb[j] * pb[j]);
                        break;
                }
            });
        },
        name);
}

// Elementwise unary op; `deriv` receives (input, output) and returns d out / d in.
template <class Fwd, class Deriv>
Var unary(const Var& av, Fwd fwd, Deriv deriv, const char* name) {
    Tape& tape = *av.tape();
    const Tensor& a = av.value();
    Tensor out(a.rows(), a.cols());
    auto pa = a.data();
    auto po = out.data();
    for (std::size_t i = 0; i < pa.size(); ++i) po[i] = fwd(pa[i]);
    const int ia = av.id();
    return tape.record(
        std::move(out), {ia},
        [ia, deriv](Tape& t, int self) {
            auto ga = t.accum(ia);
            if (ga.empty()) return;
            auto g = t.grad(self);
            auto x = t.value(ia).data();
            auto y = t.value(self).data();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
        },
        name);
}

}  // namespace

Var matmul(const Var& av, const Var& bv) {
    Tape& tape = same_tape(av, bv);
    Tensor out = numkit::matmul(av.value(), bv.value());
    const int ia = av.id(), ib = bv.id();
    return tape.record(
        std::move(out), {ia, ib},
        [ia, ib](Tape& t, int self) {
            const Tensor& a = t.value(ia);
            const Tensor& b = t.value(ib);
            const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
            auto g = t.grad(self);
            auto pa = a.data();
            auto pb = b.data();
            // dA = G * B^T
            if (auto ga = t.accum(ia); !ga.empty()) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb[p * n + j];
                        ga[i * k + p] += s;
                    }
            }
            // dB = A^T * G
            if (auto gb = t.accum(ib); !gb.empty()) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = pa[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                    }
            }
        },
        "matmul");
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::add, "add"); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::sub, "sub"); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::mul, "mul"); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::div, "div"); }

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; }, "scale");
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; },
                 "add_scalar");
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Var log(const Var& a) {
    return unary(
        a,
        [](double x) {
            if (!(x > 0.0)) throw NumericalError("log of non-positive value");
            return std::log(x);
        },
        [](double x, double) { return 1.0 / x; }, "log");
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; },
                 "square");
}

Var clamp(const Var& a, double lo, double hi) {
    return unary(
        a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; }, "clamp");
}

Var sum(const Var& av) {
    Tape& tape = *av.tape();
    double s = 0.0;
    for (double v : av.value().data()) s += v;
    const int ia = av.id();
    return tape.record(
        Tensor::scalar(s), {ia},
        [ia](Tape& t, int self) {
            auto ga = t.accum(ia);
            const double g = t.grad(self)[0];
            for (double& v : ga) v += g;
        },
        "sum");
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& av) {
    Tape& tape = *av.tape();
    const Tensor& a = av.value();
    Tensor out(a.rows(), 1);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (double v : a.row_span(r)) s += v;
        out[r] = s;
    }
    const int ia = av.id();
    return tape.record(
        std::move(out), {ia},
        [ia](Tape& t, int self) {
            auto ga = t.accum(ia);
            auto g = t.grad(self);
            const std::size_t cols = t.value(ia).cols();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / cols];
        },
        "row_sum");
}

Var concat_cols(const Var& av, const Var& bv) {
    Tape& tape = same_tape(av, bv);
    const Tensor& a = av.value();
    const Tensor& b = bv.value();
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols row mismatch: " + shape_string(a) + " vs " + shape_string(b));
    }
    Tensor out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.row_span(r);
        std::copy(a.row_span(r).begin(), a.row_span(r).end(), dst.begin());
        std::copy(b.row_span(r).begin(), b.row_span(r).end(), dst.begin() + a.cols());
    }
    const int ia = av.id(), ib = bv.id();
    return tape.record(
        std::move(out), {ia, ib},
        [ia, ib](Tape& t, int self) {
            const std::size_t ca = t.value(ia).cols(), cb = t.value(ib).cols();
            const std::size_t rows = t.value(ia).rows();
            auto g = t.grad(self);
            auto ga = t.accum(ia);
            auto gb = t.accum(ib);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* src = g.data() + r * (ca + cb);
                if (!ga.empty())
                    for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += src[c];
                if (!gb.empty())
                    for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += src[ca + c];
            }
        },
        "concat_cols");
}

Var slice_cols(const Var& av, std::size_t begin, std::size_t count) {
    Tape& tape = *av.tape();
    const Tensor& a = av.value();
    if (begin + count > a.cols()) throw ShapeError("slice_cols out of range for " + shape_string(a));
    Tensor out(a.rows(), count);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = a(r, begin + c);
    const int ia = av.id();
    return tape.record(
        std::move(out), {ia},
        [ia, begin, count](Tape& t, int self) {
            auto ga = t.accum(ia);
            auto g = t.grad(self);
            const std::size_t cols = t.value(ia).cols();
            const std::size_t rows = t.value(ia).rows();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < count; ++c) ga[r * cols + begin + c] += g[r * count + c];
        },
        "slice_cols");
}

Var softmax_cross_entropy(const Var& lv, std::span<const int> labels) {
    Tape& tape = *lv.tape();
    const Tensor& logits = lv.value();
    if (labels.size() != logits.rows()) throw ShapeError("one label per logits row required");
    const std::size_t rows = logits.rows(), cols = logits.cols();
    Tensor probs(rows, cols);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) {
            throw std::out_of_range("label outside logits range");
        }
        auto row = logits.row_span(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            probs(r, c) = std::exp(row[c] - mx);
            z += probs(r, c);
        }
        for (std::size_t c = 0; c < cols; ++c) probs(r, c) /= z;
        loss -= row[labels[r]] - mx - std::log(z);
    }
    loss /= static_cast<double>(rows);
    std::vector<int> lab(labels.begin(), labels.end());
    const int il = lv.id();
    return tape.record(
        Tensor::scalar(loss), {il},
        [il, probs = std::move(probs), lab = std::move(lab)](Tape& t, int self) {
            auto gl = t.accum(il);
            const double g = t.grad(self)[0] / static_cast<double>(lab.size());
            const std::size_t cols = probs.cols();
            for (std::size_t r = 0; r < probs.rows(); ++r)
                for (std::size_t c = 0; c < cols; ++c) {
                    const double target = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
                    gl[r * cols + c] += g * (probs(r, c) - target);
                }
        },
        "softmax_cross_entropy");
}

}  // namespace latentfuse::numkit
