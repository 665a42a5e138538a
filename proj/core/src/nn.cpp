#include "tadiff/nn.hpp"

#include "tadiff/error.hpp"

#include <cmath>

namespace tadiff::nn {

ParamSet::ParamSet(const ParamSet& other) : params_(other.params_) {}

ParamSet& ParamSet::operator=(const ParamSet& other) {
    if (this != &other) params_ = other.params_;
    return *this;
}

ad::Param& ParamSet::add(std::string name, Matrix value) {
    for (const auto& p : params_)
        if (p.name == name) fail(ErrorKind::Input, "duplicate parameter name '" + name + "'");
    params_.emplace_back(std::move(name), std::move(value));
    return params_.back();
}

ad::Param& ParamSet::at(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    fail(ErrorKind::Schema, "missing parameter '" + std::string(name) + "'");
}

const ad::Param& ParamSet::at(std::string_view name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    fail(ErrorKind::Schema, "missing parameter '" + std::string(name) + "'");
}

Eigen::Index ParamSet::total_size() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Vector ParamSet::flatten() const {
    Vector out(total_size());
    Eigen::Index off = 0;
    for (const auto& p : params_) {
        out.segment(off, p.value.size()) = p.value.reshaped();
        off += p.value.size();
    }
    return out;
}

Vector ParamSet::flatten_grad() const {
    Vector out(total_size());
    Eigen::Index off = 0;
    for (const auto& p : params_) {
        out.segment(off, p.grad.size()) = p.grad.reshaped();
        off += p.grad.size();
    }
    return out;
}

void ParamSet::assign(const Vector& flat) {
    if (flat.size() != total_size()) fail(ErrorKind::Input, "ParamSet::assign: size mismatch");
    Eigen::Index off = 0;
    for (auto& p : params_) {
        p.value.reshaped() = flat.segment(off, p.value.size());
        off += p.value.size();
    }
}

bool ParamSet::all_finite() const {
    for (const auto& p : params_)
        if (!p.value.allFinite()) return false;
    return true;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
        const auto& pa = a.params_[i];
        const auto& pb = b.params_[i];
        if (pa.name != pb.name || pa.value.rows() != pb.value.rows() || pa.value.cols() != pb.value.cols()) return false;
        if (pa.value != pb.value) return false;
    }
    return true;
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, RngStream& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
    return m;
}

Linear Linear::create(ParamSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = &ps.add(prefix + ".weight", uniform_init(in, out, bound, rng));
    l.bias = &ps.add(prefix + ".bias", uniform_init(1, out, bound, rng));
    return l;
}

Linear Linear::bind(ParamSet& ps, const std::string& prefix) {
    return Linear{&ps.at(prefix + ".weight"), &ps.at(prefix + ".bias")};
}

ad::Var Linear::forward(ad::Tape& tape, ad::Var x) const {
    return ad::add_row(ad::matmul(x, tape.param(*weight)), tape.param(*bias));
}

Matrix Linear::eval(const Matrix& x) const {
    Matrix y = x * weight->value;
    y.rowwise() += bias->value.row(0);
    return y;
}

Gru Gru::create(ParamSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    Gru g;
    g.w_input = &ps.add(prefix + ".w_input", uniform_init(in, 3 * hidden, bound, rng));
    g.w_hidden = &ps.add(prefix + ".w_hidden", uniform_init(hidden, 3 * hidden, bound, rng));
    g.b_input = &ps.add(prefix + ".b_input", uniform_init(1, 3 * hidden, bound, rng));
    g.b_hidden = &ps.add(prefix + ".b_hidden", uniform_init(1, 3 * hidden, bound, rng));
    g.hidden = hidden;
    return g;
}

Gru Gru::bind(ParamSet& ps, const std::string& prefix) {
    Gru g;
    g.w_input = &ps.at(prefix + ".w_input");
    g.w_hidden = &ps.at(prefix + ".w_hidden");
    g.b_input = &ps.at(prefix + ".b_input");
    g.b_hidden = &ps.at(prefix + ".b_hidden");
    g.hidden = g.w_hidden->value.rows();
    return g;
}

ad::Var Gru::step(ad::Tape& tape, ad::Var x, ad::Var h) const {
    using namespace ad;
    const Var gx = add_row(matmul(x, tape.param(*w_input)), tape.param(*b_input));
    const Var gh = add_row(matmul(h, tape.param(*w_hidden)), tape.param(*b_hidden));
    const Var r = sigmoid(add(slice_cols(gx, 0, hidden), slice_cols(gh, 0, hidden)));
    const Var z = sigmoid(add(slice_cols(gx, hidden, hidden), slice_cols(gh, hidden, hidden)));
    const Var n = tanh(add(slice_cols(gx, 2 * hidden, hidden), mul(r, slice_cols(gh, 2 * hidden, hidden))));
    return add(mul(one_minus(z), n), mul(z, h));
}

std::vector<ad::Var> Gru::run(ad::Tape& tape, const std::vector<ad::Var>& inputs, bool reverse) const {
    std::vector<ad::Var> states(inputs.size());
    if (inputs.empty()) return states;
    ad::Var h = tape.constant(Matrix::Zero(inputs.front().rows(), hidden));
    const std::size_t n = inputs.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t t = reverse ? n - 1 - k : k;
        h = step(tape, inputs[t], h);
        states[t] = h;
    }
    return states;
}

Matrix Gru::step_eval(const Matrix& x, const Matrix& h) const {
    Matrix gx = x * w_input->value;
    gx.rowwise() += b_input->value.row(0);
    Matrix gh = h * w_hidden->value;
    gh.rowwise() += b_hidden->value.row(0);
    const auto H = hidden;
    const Matrix r = tadiff::sigmoid(gx.middleCols(0, H) + gh.middleCols(0, H));
    const Matrix z = tadiff::sigmoid(gx.middleCols(H, H) + gh.middleCols(H, H));
    const Matrix n = tadiff::tanh((gx.middleCols(2 * H, H).array() + r.array() * gh.middleCols(2 * H, H).array()).matrix());
    return ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
}

std::vector<Matrix> Gru::run_eval(const std::vector<Matrix>& inputs, bool reverse) const {
    std::vector<Matrix> states(inputs.size());
    if (inputs.empty()) return states;
    Matrix h = Matrix::Zero(inputs.front().rows(), hidden);
    const std::size_t n = inputs.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t t = reverse ? n - 1 - k : k;
        h = step_eval(inputs[t], h);
        states[t] = h;
    }
    return states;
}

Adam::Adam(const ParamSet& params, AdamConfig config) : config_(config) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
        v_.push_back(Matrix::Zero(params[i].value.rows(), params[i].value.cols()));
    }
}

void Adam::step(ParamSet& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= config_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
    }
}

}  // namespace tadiff::nn
