#include "tadiff/autodiff.hpp"

#include "tadiff/error.hpp"

#include <cmath>

namespace tadiff::ad {

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(Param& p) {
    Node n;
    n.value = p.value;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backprop backprop) {
    Node n;
    n.value = std::move(value);
    for (const Var& p : parents) {
        if (p.tape != this) fail(ErrorKind::Input, "autodiff: variables from different tapes");
        n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var root) {
    if (root.tape != this) fail(ErrorKind::Input, "autodiff: root belongs to another tape");
    if (nodes_[root.id].value.size() != 1) fail(ErrorKind::Input, "autodiff: backward needs a scalar root");
    accumulate(root.id, Matrix::Ones(1, 1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.backprop) n.backprop(*this, i);
        if (n.param != nullptr) n.param->grad += n.grad;
    }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        fail(ErrorKind::Input, std::string("autodiff ") + op + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                   std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                   std::to_string(b.cols()) + ")");
}

}  // namespace

Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    const auto ia = a.id, ib = b.id;
    return a.tape->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad(self));
        t.accumulate(ib, t.grad(self));
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    const auto ia = a.id, ib = b.id;
    return a.tape->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad(self));
        t.accumulate(ib, -t.grad(self));
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    const auto ia = a.id, ib = b.id;
    return a.tape->push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.accumulate(ia, t.grad(self).cwiseProduct(t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, t.grad(self).cwiseProduct(t.value(ia)));
    });
}

Var matmul(Var a, Var b) {
    if (a.cols() != b.rows()) fail(ErrorKind::Input, "autodiff matmul: inner dimension mismatch");
    const auto ia = a.id, ib = b.id;
    Matrix out = a.value() * b.value();
    return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        if (t.requires_grad(ia)) t.accumulate(ia, t.grad(self) * t.value(ib).transpose());
        if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * t.grad(self));
    });
}

Var add_row(Var a, Var b) {
    if (b.rows() != 1 || b.cols() != a.cols()) fail(ErrorKind::Input, "autodiff add_row: bias shape mismatch");
    const auto ia = a.id, ib = b.id;
    Matrix out = a.value().rowwise() + b.value().row(0);
    return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad(self));
        if (t.requires_grad(ib)) t.accumulate(ib, t.grad(self).colwise().sum());
    });
}

Var scale(Var a, double s) {
    const auto ia = a.id;
    return a.tape->push(a.value() * s, {a}, [ia, s](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self) * s); });
}

Var add_scalar(Var a, double s) {
    const auto ia = a.id;
    Matrix out = a.value().array() + s;
    return a.tape->push(std::move(out), {a}, [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self)); });
}

Var scale_rows(Var a, const Vector& coeffs) {
    if (coeffs.size() != a.rows()) fail(ErrorKind::Input, "autodiff scale_rows: coefficient count mismatch");
    const auto ia = a.id;
    Matrix out = coeffs.asDiagonal() * a.value();
    return a.tape->push(std::move(out), {a}, [ia, coeffs](Tape& t, std::size_t self) {
        t.accumulate(ia, coeffs.asDiagonal() * t.grad(self));
    });
}

Var neg(Var a) { return scale(a, -1.0); }

Var one_minus(Var a) {
    const auto ia = a.id;
    Matrix out = 1.0 - a.value().array();
    return a.tape->push(std::move(out), {a}, [ia](Tape& t, std::size_t self) { t.accumulate(ia, -t.grad(self)); });
}

Var square(Var a) {
    const auto ia = a.id;
    return a.tape->push(a.value().array().square().matrix(), {a}, [ia](Tape& t, std::size_t self) {
        t.accumulate(ia, (2.0 * t.value(ia).array() * t.grad(self).array()).matrix());
    });
}

Var exp(Var a) {
    const auto ia = a.id;
    return a.tape->push(a.value().array().exp().matrix(), {a}, [ia](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad(self).cwiseProduct(t.value(self)));
    });
}

Var sigmoid(Var a) {
    const auto ia = a.id;
    Matrix out = tadiff::sigmoid(a.value());
    return a.tape->push(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
        const auto& y = t.value(self).array();
        t.accumulate(ia, (t.grad(self).array() * y * (1.0 - y)).matrix());
    });
}

Var tanh(Var a) {
    const auto ia = a.id;
    return a.tape->push(tadiff::tanh(a.value()), {a}, [ia](Tape& t, std::size_t self) {
        const auto& y = t.value(self).array();
        t.accumulate(ia, (t.grad(self).array() * (1.0 - y.square())).matrix());
    });
}

Var clamp(Var a, double lo, double hi) {
    const auto ia = a.id;
    Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
    return a.tape->push(std::move(out), {a}, [ia, lo, hi](Tape& t, std::size_t self) {
        const auto& x = t.value(ia).array();
        const Matrix inside = ((x >= lo) && (x <= hi)).cast<double>().matrix();
        t.accumulate(ia, t.grad(self).cwiseProduct(inside));
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) fail(ErrorKind::Input, "autodiff concat_cols: nothing to concatenate");
    Tape* tape = parts.front().tape;
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        if (p.rows() != rows) fail(ErrorKind::Input, "autodiff concat_cols: row count mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::pair<std::size_t, Eigen::Index>> layout;
    layout.reserve(parts.size());
    Eigen::Index offset = 0;
    bool any_grad = false;
    for (const Var& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        layout.emplace_back(p.id, p.cols());
        offset += p.cols();
        any_grad = any_grad || tape->requires_grad(p.id);
    }
    // push() only accepts a fixed parent list; route through the first part
    // and flag requires_grad from the union explicitly.
    Var anchor = parts.front();
    for (const Var& p : parts)
        if (tape->requires_grad(p.id)) anchor = p;
    return tape->push(std::move(out), {anchor}, [layout](Tape& t, std::size_t self) {
        Eigen::Index off = 0;
        for (const auto& [id, width] : layout) {
            if (t.requires_grad(id)) t.accumulate(id, t.grad(self).middleCols(off, width));
            off += width;
        }
    });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) fail(ErrorKind::Input, "autodiff slice_cols: out of range");
    const auto ia = a.id;
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return a.tape->push(a.value().middleCols(start, count), {a}, [ia, start, count, rows, cols](Tape& t, std::size_t self) {
        Matrix g = Matrix::Zero(rows, cols);
        g.middleCols(start, count) = t.grad(self);
        t.accumulate(ia, g);
    });
}

Var sum(Var a) {
    const auto ia = a.id;
    const Eigen::Index rows = a.rows(), cols = a.cols();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape->push(std::move(out), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
        t.accumulate(ia, Matrix::Constant(rows, cols, t.grad(self)(0, 0)));
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    const auto ia = a.id;
    const Eigen::Index rows = a.rows(), cols = a.cols();
    Matrix out(1, 1);
    out(0, 0) = a.value().sum() / n;
    return a.tape->push(std::move(out), {a}, [ia, rows, cols, n](Tape& t, std::size_t self) {
        t.accumulate(ia, Matrix::Constant(rows, cols, t.grad(self)(0, 0) / n));
    });
}

Var mse(Var a, Var b) {
    check_same_shape(a, b, "mse");
    const double n = static_cast<double>(a.value().size());
    const auto ia = a.id, ib = b.id;
    Matrix out(1, 1);
    out(0, 0) = (a.value() - b.value()).array().square().sum() / n;
    return a.tape->push(std::move(out), {a, b}, [ia, ib, n](Tape& t, std::size_t self) {
        const Matrix g = (t.value(ia) - t.value(ib)) * (2.0 * t.grad(self)(0, 0) / n);
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

Var bce_with_logits(Var logits, const Matrix& targets, double eps) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
        fail(ErrorKind::Input, "autodiff bce_with_logits: target shape mismatch");
    const Matrix& l = logits.value();
    const double n = static_cast<double>(l.size());
    Matrix p = tadiff::sigmoid(l);
    Matrix pc = p.cwiseMax(eps).cwiseMin(1.0 - eps);
    double total = 0.0;
    for (Eigen::Index j = 0; j < l.cols(); ++j)
        for (Eigen::Index i = 0; i < l.rows(); ++i) {
            const double y = targets(i, j);
            total -= y * std::log(pc(i, j)) + (1.0 - y) * std::log(1.0 - pc(i, j));
        }
    Matrix out(1, 1);
    out(0, 0) = total / n;
    const auto il = logits.id;
    return logits.tape->push(std::move(out), {logits},
                             [il, p = std::move(p), targets, eps, n](Tape& t, std::size_t self) {
                                 Matrix g(p.rows(), p.cols());
                                 const double scale = t.grad(self)(0, 0) / n;
                                 for (Eigen::Index j = 0; j < p.cols(); ++j)
                                     for (Eigen::Index i = 0; i < p.rows(); ++i) {
                                         const double pi = p(i, j);
                                         g(i, j) = (pi < eps || pi > 1.0 - eps) ? 0.0 : (pi - targets(i, j)) * scale;
                                     }
                                 t.accumulate(il, g);
                             });
}

Var pairwise_sqdist(Var a, Var b) {
    if (a.cols() != b.cols()) fail(ErrorKind::Input, "autodiff pairwise_sqdist: dimension mismatch");
    const Matrix& x = a.value();
    const Matrix& y = b.value();
    Matrix d(x.rows(), y.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < y.rows(); ++j) d(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    const auto ia = a.id, ib = b.id;
    return a.tape->push(std::move(d), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& xv = t.value(ia);
        const Matrix& yv = t.value(ib);
        // d/dx_i = 2 sum_j g_ij (x_i - y_j); d/dy_j = -2 sum_i g_ij (x_i - y_j)
        if (t.requires_grad(ia)) {
            Matrix gx = 2.0 * (g.rowwise().sum().asDiagonal() * xv - g * yv);
            t.accumulate(ia, gx);
        }
        if (t.requires_grad(ib)) {
            Matrix gy = 2.0 * (g.colwise().sum().transpose().asDiagonal() * yv - g.transpose() * xv);
            t.accumulate(ib, gy);
        }
    });
}

Var mmd_rbf(Var x, Var y, double bandwidth) {
    if (x.rows() != y.rows()) fail(ErrorKind::Input, "mmd: sample sets must have equal size");
    if (!(bandwidth > 0.0)) fail(ErrorKind::Input, "mmd: bandwidth must be positive");
    const double c = -1.0 / (2.0 * bandwidth * bandwidth);
    const Var kxx = exp(scale(pairwise_sqdist(x, x), c));
    const Var kyy = exp(scale(pairwise_sqdist(y, y), c));
    const Var kxy = exp(scale(pairwise_sqdist(x, y), c));
    return sub(add(mean(kxx), mean(kyy)), scale(mean(kxy), 2.0));
}

}  // namespace tadiff::ad
