#pragma once

#include "tadiff/autodiff.hpp"
#include "tadiff/numerics.hpp"

#include <deque>
#include <string>
#include <vector>

namespace tadiff::nn {

/// Ordered, named collection of trainable tensors.
///
/// Params live in a deque so pointers handed to a Tape stay valid while
/// more parameters are registered.
class ParamSet {
public:
    ParamSet() = default;
    ParamSet(const ParamSet& other);
    ParamSet& operator=(const ParamSet& other);
    ParamSet(ParamSet&&) noexcept = default;
    ParamSet& operator=(ParamSet&&) noexcept = default;

    ad::Param& add(std::string name, Matrix value);
    [[nodiscard]] ad::Param& at(std::string_view name);
    [[nodiscard]] const ad::Param& at(std::string_view name) const;

    [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
    [[nodiscard]] Eigen::Index total_size() const;
    ad::Param& operator[](std::size_t i) { return params_[i]; }
    const ad::Param& operator[](std::size_t i) const { return params_[i]; }

    void zero_grad();
    [[nodiscard]] Vector flatten() const;
    [[nodiscard]] Vector flatten_grad() const;
    void assign(const Vector& flat);
    [[nodiscard]] bool all_finite() const;

    friend bool operator==(const ParamSet& a, const ParamSet& b);

private:
    std::deque<ad::Param> params_;
};

/// PyTorch-style uniform(-1/sqrt(fan), 1/sqrt(fan)) initialization.
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, RngStream& rng);

struct Linear {
    ad::Param* weight = nullptr;  // in x out
    ad::Param* bias = nullptr;    // 1 x out

    static Linear create(ParamSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out, RngStream& rng);
    static Linear bind(ParamSet& ps, const std::string& prefix);

    [[nodiscard]] ad::Var forward(ad::Tape& tape, ad::Var x) const;
    [[nodiscard]] Matrix eval(const Matrix& x) const;
};

/// Single-layer GRU with fused gate weights (gate order r, z, n):
///   r = sig(x Wr + br + h Ur + cr)
///   z = sig(x Wz + bz + h Uz + cz)
///   n = tanh(x Wn + bn + r * (h Un + cn))
///   h' = (1 - z) * n + z * h
struct Gru {
    ad::Param* w_input = nullptr;   // in x 3H
    ad::Param* w_hidden = nullptr;  // H x 3H
    ad::Param* b_input = nullptr;   // 1 x 3H
    ad::Param* b_hidden = nullptr;  // 1 x 3H
    Eigen::Index hidden = 0;

    static Gru create(ParamSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden, RngStream& rng);
    static Gru bind(ParamSet& ps, const std::string& prefix);

    [[nodiscard]] ad::Var step(ad::Tape& tape, ad::Var x, ad::Var h) const;
    /// Runs over time-major inputs (one B x in matrix per step); returns every hidden state.
    [[nodiscard]] std::vector<ad::Var> run(ad::Tape& tape, const std::vector<ad::Var>& inputs, bool reverse = false) const;

    [[nodiscard]] Matrix step_eval(const Matrix& x, const Matrix& h) const;
    [[nodiscard]] std::vector<Matrix> run_eval(const std::vector<Matrix>& inputs, bool reverse = false) const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(const ParamSet& params, AdamConfig config);
    void step(ParamSet& params);
    [[nodiscard]] long steps() const noexcept { return t_; }

private:
    AdamConfig config_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    long t_ = 0;
};

}  // namespace tadiff::nn
