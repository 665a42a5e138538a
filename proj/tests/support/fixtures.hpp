#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests.

#include "tadiff/data.hpp"
#include "tadiff/numerics.hpp"

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tadiff::test {

/// AUROC by explicit pair counting: wins + half ties over all (pos, neg) pairs.
inline double auroc_pairs(std::span<const double> s, std::span<const int> y) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            pairs += 1.0;
            if (s[i] > s[j]) num += 1.0;
            else if (s[i] == s[j]) num += 0.5;
        }
    }
    return num / pairs;
}

/// MMD as the literal four-loop double sum: mean kxx + mean kyy - 2 mean kxy.
inline double mmd_loops(const Matrix& x, const Matrix& y, double bw) {
    auto k = [&](const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
        double d2 = 0.0;
        for (Eigen::Index c = 0; c < a.cols(); ++c) d2 += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
        return std::exp(-d2 / (2.0 * bw * bw));
    };
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.rows(); ++j) xx += k(x, i, x, j);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        for (Eigen::Index j = 0; j < y.rows(); ++j) yy += k(y, i, y, j);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < y.rows(); ++j) xy += k(x, i, y, j);
    const double n = static_cast<double>(x.rows()), m = static_cast<double>(y.rows());
    return std::max(0.0, xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m));
}

/// Small cohort with random values and masks; values hold their forward-fill
/// value at unobserved cells so the record passes validation.
inline Cohort random_cohort(std::size_t n, int steps, int features, std::uint64_t seed, double p_observed = 0.8) {
    RngStream rng(seed);
    Cohort c;
    c.meta.steps = steps;
    c.meta.features = features;
    for (int f = 0; f < features; ++f) c.meta.feature_names.push_back("x" + std::to_string(f));
    c.meta.fill_values.assign(static_cast<std::size_t>(features), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix raw(steps, features);
        for (int t = 0; t < steps; ++t)
            for (int f = 0; f < features; ++f)
                raw(t, f) = rng.uniform() < p_observed ? rng.normal() : std::nan("");
        auto filled = forward_fill(raw, c.meta.fill_values);
        PatientRecord r;
        r.id = static_cast<std::int64_t>(i);
        r.values = std::move(filled.values);
        r.mask = std::move(filled.mask);
        r.condition.demo = Demographics::from_index(static_cast<int>(rng.uniform_index(kSubgroups)));
        r.condition.outcome = rng.bernoulli(0.5) ? 1 : 0;
        c.records.push_back(std::move(r));
    }
    return c;
}

/// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("tadiff_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace tadiff::test
