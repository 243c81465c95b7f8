#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentfuse::numkit {

/// Raised whenever a computation produces NaN or Inf.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised on incompatible operand shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. Vectors are 1xN (row) or Nx1 (column).
///
/// A tensor may carry a gradient buffer of the same shape. Trainable tensors
/// are registered on a Tape with Tape::param(), which records the node id of
/// the registration until the tape is reset.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor row(std::vector<double> values);
    static Tensor column(std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    Tensor row_copy(std::size_t r) const;

    double item() const;

    // Gradient buffer, allocated on first use.
    bool has_grad() const { return !grad_.empty(); }
    std::span<double> grad();
    std::span<const double> grad() const { return grad_; }
    void zero_grad();
    void clear_grad() { grad_.clear(); }

    bool trainable() const { return trainable_; }
    void set_trainable(bool on) { trainable_ = on; }
    int node_id() const { return node_id_; }

    bool all_finite() const;
    bool operator==(const Tensor& other) const;

private:
    friend class Tape;

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool trainable_ = false;
    int node_id_ = -1;
};

std::string shape_string(const Tensor& t);

/// Plain (non-recording) helpers.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// Throws NumericalError naming `where` if any entry is NaN/Inf.
void require_finite(const Tensor& t, const char* where);

}  // namespace latentfuse::numkit
