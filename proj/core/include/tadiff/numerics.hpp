#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace tadiff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Seeded random stream.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. Distributions are implemented here rather than through
/// <random> distribution objects, whose algorithms differ between standard
/// libraries. Normal deviates use the Box-Muller transform.
///
/// Child streams are keyed by (seed, label) through SplitMix64 and do not
/// depend on how many values the parent has already produced.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    [[nodiscard]] RngStream child(std::string_view label) const;
    [[nodiscard]] RngStream child(std::uint64_t index) const;
    [[nodiscard]] RngStream child(std::string_view label, std::uint64_t index) const;

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double normal();
    bool bernoulli(double p);
    /// Uniform integer on [0, n). Unbiased (rejection on the top range).
    std::uint64_t uniform_index(std::uint64_t n);
    /// Index drawn from an unnormalized discrete distribution.
    std::size_t categorical(std::span<const double> weights);
    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }
    template <typename T>
    void shuffle(std::vector<T>& items) {
        shuffle(std::span<T>(items));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

struct ConfidenceInterval {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    int n_runs = 0;
};

/// exp(-|x-y|^2 / (2 bandwidth^2)).
double rbf_kernel(std::span<const double> x, std::span<const double> y, double bandwidth);

/// Biased MMD V-statistic between two equally sized sample sets.
/// Rows of x and y are samples. Negative round-off is clamped to zero.
double mmd_biased(const Matrix& x, const Matrix& y, double bandwidth);

/// Median pairwise Euclidean distance over the rows of [x; y] (distinct
/// pairs). Falls back to 1.0 when every point coincides.
double median_bandwidth(const Matrix& x, const Matrix& y);

/// Mann-Whitney AUROC; ties receive half credit.
/// Throws ErrorKind::UndefinedMetric unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Mean with a Student-t 95% interval; a single value yields a zero-width interval.
ConfidenceInterval mean_ci95(std::span<const double> values);

/// Two-sided 97.5% Student-t quantile for the given degrees of freedom.
double student_t_975(int dof);

using ScalarFunction = std::function<double(const Vector&)>;

/// Central-difference gradient. Throws ErrorKind::Numeric on non-finite f.
Vector finite_diff_grad(const ScalarFunction& f, const Vector& x, double h);

/// |a-b| / max(|a|, |b|, floor) over whole vectors (2-norm).
double relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-12);

double median(std::vector<double> values);

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Elementwise logistic, vectorized. Saturates to exactly 0 or 1 without NaN.
inline Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

/// Elementwise tanh as 2 sigmoid(2x) - 1; Eigen's double tanh is not vectorized.
inline Matrix tanh(const Matrix& x) { return (2.0 * (1.0 + (-2.0 * x.array()).exp()).inverse() - 1.0).matrix(); }

}  // namespace tadiff
