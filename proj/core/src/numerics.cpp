#include "tadiff/numerics.hpp"

#include "tadiff/error.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace tadiff {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

RngStream RngStream::child(std::string_view label) const {
    return RngStream(splitmix64(seed_ ^ fnv1a64(label)));
}

RngStream RngStream::child(std::uint64_t index) const {
    return RngStream(splitmix64(splitmix64(seed_) + index));
}

RngStream RngStream::child(std::string_view label, std::uint64_t index) const {
    return child(label).child(index);
}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
    if (n == 0) fail(ErrorKind::Input, "uniform_index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
}

std::size_t RngStream::categorical(std::span<const double> weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) fail(ErrorKind::Input, "categorical: weights must have positive mass");
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    // Round-off: return the last index with positive weight.
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return weights.size() - 1;
}

Matrix RngStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    // Row-major fill so a matrix draw matches a row-by-row draw.
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal();
    return m;
}

double rbf_kernel(std::span<const double> x, std::span<const double> y, double bandwidth) {
    if (x.size() != y.size())
        fail(ErrorKind::Input, "rbf_kernel: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                                   std::to_string(y.size()) + ")");
    if (!(bandwidth > 0.0)) fail(ErrorKind::Input, "rbf_kernel: bandwidth must be positive");
    double d2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - y[k];
        d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * bandwidth * bandwidth));
}

namespace {

double row_kernel(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j, double bandwidth) {
    double d2 = 0.0;
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * bandwidth * bandwidth));
}

double kernel_sum(const Matrix& a, const Matrix& b, double bandwidth) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) s += row_kernel(a, i, b, j, bandwidth);
    return s;
}

}  // namespace

double mmd_biased(const Matrix& x, const Matrix& y, double bandwidth) {
    if (x.rows() == 0 || y.rows() == 0) fail(ErrorKind::Input, "mmd_biased: empty sample set");
    if (x.rows() != y.rows())
        fail(ErrorKind::Input, "mmd_biased: sample sets must have equal size (" + std::to_string(x.rows()) +
                                   " vs " + std::to_string(y.rows()) + ")");
    if (x.cols() != y.cols()) fail(ErrorKind::Input, "mmd_biased: dimension mismatch");
    if (!(bandwidth > 0.0)) fail(ErrorKind::Input, "mmd_biased: bandwidth must be positive");
    const double b2 = static_cast<double>(x.rows()) * static_cast<double>(x.rows());
    const double value = kernel_sum(x, x, bandwidth) / b2 + kernel_sum(y, y, bandwidth) / b2 -
                         2.0 * kernel_sum(x, y, bandwidth) / b2;
    if (value < -1e-12) fail(ErrorKind::Numeric, "mmd_biased: negative statistic " + std::to_string(value));
    return std::max(value, 0.0);
}

double median(std::vector<double> values) {
    if (values.empty()) fail(ErrorKind::Input, "median of empty set");
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double median_bandwidth(const Matrix& x, const Matrix& y) {
    Matrix all(x.rows() + y.rows(), x.cols());
    all << x, y;
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(all.rows() * (all.rows() - 1) / 2));
    for (Eigen::Index i = 0; i < all.rows(); ++i)
        for (Eigen::Index j = i + 1; j < all.rows(); ++j) dists.push_back((all.row(i) - all.row(j)).norm());
    if (dists.empty()) return 1.0;
    const double m = median(std::move(dists));
    return m > 0.0 ? m : 1.0;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) fail(ErrorKind::Input, "auroc: scores/labels length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double positives = 0.0;
    double rank_sum = 0.0;  // sum of (1-based, tie-averaged) ranks of positives
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] != 0) {
                positives += 1.0;
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    const double negatives = static_cast<double>(n) - positives;
    if (positives == 0.0 || negatives == 0.0)
        fail(ErrorKind::UndefinedMetric, "auroc: labels contain a single class");
    const double u = rank_sum - positives * (positives + 1.0) / 2.0;
    return u / (positives * negatives);
}

double student_t_975(int dof) {
    if (dof < 1) fail(ErrorKind::Input, "student_t_975: degrees of freedom must be positive");
    const boost::math::students_t dist(static_cast<double>(dof));
    return boost::math::quantile(dist, 0.975);
}

ConfidenceInterval mean_ci95(std::span<const double> values) {
    if (values.empty()) fail(ErrorKind::Input, "mean_ci95: no values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    ConfidenceInterval ci{mean, mean, mean, static_cast<int>(values.size())};
    if (values.size() == 1) return ci;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const double half = student_t_975(static_cast<int>(values.size()) - 1) * sd / std::sqrt(n);
    ci.lo = mean - half;
    ci.hi = mean + half;
    return ci;
}

Vector finite_diff_grad(const ScalarFunction& f, const Vector& x, double h) {
    if (!(h > 0.0)) fail(ErrorKind::Input, "finite_diff_grad: step must be positive");
    Vector grad(x.size());
    Vector probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(up) || !std::isfinite(down))
            fail(ErrorKind::Numeric, "finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double relative_error(const Vector& analytic, const Vector& numeric, double floor) {
    const double scale = std::max({analytic.norm(), numeric.norm(), floor});
    return (analytic - numeric).norm() / scale;
}

}  // namespace tadiff
