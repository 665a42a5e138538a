#pragma once

// Finite-difference gradient oracles shared by the unit and acceptance tests.
// Each copies the RNG stream per evaluation so every loss call sees the same noise.

#include "tadiff/autoencoder.hpp"
#include "tadiff/diffusion.hpp"
#include "tadiff/downstream.hpp"

#include <vector>

namespace tadiff::test {

inline std::vector<Matrix> random_latents(std::size_t n, int T, int d, RngStream& rng) {
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(rng.normal_matrix(T, d));
    return out;
}

inline std::vector<Condition> random_conditions(std::size_t n, RngStream& rng) {
    std::vector<Condition> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(Condition{Demographics::from_index(static_cast<int>(rng.uniform_index(kSubgroups))),
                                rng.bernoulli(0.5) ? 1 : 0});
    return out;
}

/// Relative error between the tape gradient and central differences of the VAE total.
inline double vae_gradient_error(const Cohort& c, VaeParams p, const VaeWeights& w, std::uint64_t seed) {
    const RngStream rng0(seed);
    p.params.zero_grad();
    RngStream r = rng0;
    (void)vae_loss_enhanced(c.records, p, w, r, true);
    const Vector analytic = p.params.flatten_grad();
    const Vector x0 = p.params.flatten();
    auto f = [&](const Vector& x) {
        p.params.assign(x);
        RngStream rr = rng0;
        return vae_loss_enhanced(c.records, p, w, rr).total;
    };
    return relative_error(analytic, finite_diff_grad(f, x0, 1e-5));
}

inline double diffusion_gradient_error(const std::vector<Matrix>& z, const std::vector<Condition>& c, DenoiserParams p,
                                       const NoiseSchedule& s, const DiffusionWeights& w, double p_uncond,
                                       std::uint64_t seed) {
    const RngStream rng0(seed);
    p.params.zero_grad();
    RngStream r = rng0;
    (void)diffusion_loss_enhanced(z, c, p, s, w, p_uncond, r, true);
    const Vector analytic = p.params.flatten_grad();
    const Vector x0 = p.params.flatten();
    auto f = [&](const Vector& x) {
        p.params.assign(x);
        RngStream rr = rng0;
        return diffusion_loss_enhanced(z, c, p, s, w, p_uncond, rr).total;
    };
    return relative_error(analytic, finite_diff_grad(f, x0, 1e-5));
}

inline double classifier_gradient_error(const Cohort& c, GruClassifier m) {
    const auto y = outcomes(c);
    m.params.zero_grad();
    (void)classifier_loss(c.records, y, m, true);
    const Vector analytic = m.params.flatten_grad();
    auto f = [&](const Vector& x) {
        m.params.assign(x);
        return classifier_loss(c.records, y, m);
    };
    return relative_error(analytic, finite_diff_grad(f, m.params.flatten(), 1e-5));
}

}  // namespace tadiff::test
