#pragma once

#include "tadiff/numerics.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

/// Minimal reverse-mode differentiation over dense matrices.
///
/// A Tape records matrix-valued nodes in evaluation order; backward() walks
/// them in reverse and accumulates adjoints. Leaves bound to a Param push
/// their adjoint into Param::grad. Tapes are single-use and not thread-safe;
/// build one per loss evaluation.
namespace tadiff::ad {

struct Param {
    std::string name;
    Matrix value;
    Matrix grad;

    Param() = default;
    Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
    [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    using Backprop = std::function<void(Tape&, std::size_t)>;

    Tape() { nodes_.reserve(1024); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var param(Param& p);

    /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
    void backward(Var root);

    [[nodiscard]] const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    /// Adds g into the adjoint of node id (no-op for constants).
    void accumulate(std::size_t id, const Matrix& g);
    [[nodiscard]] const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

    Var push(Matrix value, std::initializer_list<Var> parents, Backprop backprop);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backprop backprop;
        Param* param = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
    };
    std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
/// a (n x m) plus row vector b (1 x m) broadcast over rows.
Var add_row(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Multiplies row i of a by coeffs[i].
Var scale_rows(Var a, const Vector& coeffs);
Var neg(Var a);
Var one_minus(Var a);
Var square(Var a);
Var exp(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Clamp with zero gradient outside [lo, hi].
Var clamp(Var a, double lo, double hi);

// Shape.
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);

// Reductions to 1x1.
Var sum(Var a);
Var mean(Var a);
/// mean((a - b)^2)
Var mse(Var a, Var b);
/// Elementwise binary cross-entropy of sigmoid(logits) against constant
/// targets, with probabilities clamped to [eps, 1-eps]; returns the mean.
Var bce_with_logits(Var logits, const Matrix& targets, double eps = 1e-6);

/// Pairwise squared Euclidean distances between rows: out(i,j) = |a_i - b_j|^2.
Var pairwise_sqdist(Var a, Var b);
/// Biased MMD with an RBF kernel of fixed bandwidth (rows are samples).
Var mmd_rbf(Var x, Var y, double bandwidth);

}  // namespace tadiff::ad
