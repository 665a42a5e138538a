#include "fixtures.hpp"
#include "gradients.hpp"

#include "tadiff/diffusion.hpp"
#include "tadiff/error.hpp"
#include "tadiff/rejection.hpp"
#include "tadiff/toy.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tadiff;

namespace {

/// Small generator trained once on a toy cohort and shared by the sampling tests.
struct TrainedToy {
    Cohort train_raw;
    GeneratorTrainResult gen;
    std::vector<Matrix> latents;

    static const TrainedToy& get() {
        static const TrainedToy instance = [] {
            TrainedToy t;
            ToyPreset p = default_toy_preset();
            p.n = 1000;
            t.train_raw = synth_toy_cohort(p, 77);
            GeneratorConfig cfg;
            cfg.vae.dims = {4, 8, 32};
            cfg.vae.epochs = 30;
            cfg.diffusion.dims = {8, 32, 16, 16};
            cfg.diffusion.epochs = 60;
            t.gen = train_generator(t.train_raw, cfg, 78);
            for (const auto& post : encode_all(normalize(t.train_raw), t.gen.bundle.vae)) t.latents.push_back(post.mu);
            return t;
        }();
        return instance;
    }
};

}  // namespace

TEST(Schedule, SingleStep) {
    const auto s = make_schedule(1, 0.3, 0.3);
    ASSERT_EQ(s.steps(), 1);
    EXPECT_EQ(s.alpha_bar[0], 1.0 - 0.3);
    EXPECT_EQ(s.posterior_variance(0), 0.0);
}

TEST(Schedule, StrictlyDecreasingForValidRanges) {
    RngStream r(1);
    for (int k = 0; k < 50; ++k) {
        const double lo = 1e-5 + 0.1 * r.uniform();
        const double hi = lo + (0.99 - lo) * r.uniform();
        const auto s = make_schedule(2 + static_cast<int>(r.uniform_index(200)), lo, hi);
        for (int t = 1; t < s.steps(); ++t) {
            EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
            EXPECT_GE(s.beta[t], s.beta[t - 1]);
        }
    }
}

TEST(Schedule, ThousandStepProduct) {
    const auto s = make_schedule(1000, 1e-4, 0.02);
    double prod = 1.0;
    for (int t = 0; t < 1000; ++t) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 999.0);
    EXPECT_NEAR(s.alpha_bar.back(), prod, 1e-15);
    EXPECT_LT(s.alpha_bar.back(), 0.01);
    EXPECT_GT(s.alpha_bar.front(), 0.999);
}

TEST(Schedule, DefaultEndsNearPureNoise) {
    const DiffusionTrainConfig cfg;
    const auto s = make_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
    EXPECT_LT(s.alpha_bar.back(), 0.01);
    EXPECT_GT(s.alpha_bar.front(), 0.99);
}

TEST(Schedule, InvalidRangeIsConfigError) {
    for (auto [lo, hi] : {std::pair{0.0, 0.1}, {0.2, 0.1}, {0.1, 1.0}}) {
        try {
            (void)make_schedule(10, lo, hi);
            ADD_FAILURE() << lo << " " << hi;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config);
        }
    }
}

TEST(QSample, Endpoints) {
    NoiseSchedule s;
    s.beta = {0.5, 0.5};
    s.alpha = {0.5, 0.5};
    s.alpha_bar = {1.0, 0.0};
    RngStream r(2);
    const Matrix z0 = r.normal_matrix(3, 2), eps = r.normal_matrix(3, 2);
    EXPECT_EQ(q_sample(z0, 0, eps, s), z0);
    EXPECT_EQ(q_sample(z0, 1, eps, s), eps);
    EXPECT_THROW((void)q_sample(z0, 2, eps, s), Error);
}

TEST(QSample, MarginalLawAtThreeSteps) {
    const DiffusionTrainConfig cfg;
    const auto s = make_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max);
    Matrix z0(1, 2);
    z0 << 1.5, -0.7;
    RngStream r(3);
    const int n = 10000;
    for (int t : {0, s.steps() / 2, s.steps() - 1}) {
        Vector sum = Vector::Zero(2), sum2 = Vector::Zero(2);
        for (int i = 0; i < n; ++i) {
            const Matrix z = q_sample(z0, t, r.normal_matrix(1, 2), s);
            sum += z.row(0).transpose();
            sum2 += z.row(0).transpose().cwiseAbs2();
        }
        const double ab = s.alpha_bar[static_cast<std::size_t>(t)];
        const double var = 1.0 - ab;
        for (int k = 0; k < 2; ++k) {
            const double m = sum[k] / n;
            const double v = sum2[k] / n - m * m;
            EXPECT_LT(std::abs(m - std::sqrt(ab) * z0(0, k)), 3.0 * std::sqrt(var / n)) << t;
            // Standard error of the sample variance of a Gaussian: var sqrt(2 / (n - 1)).
            EXPECT_LT(std::abs(v - var), 3.0 * var * std::sqrt(2.0 / (n - 1))) << t;
        }
    }
}

TEST(Denoiser, ZeroWeightsGiveBias) {
    DenoiserParams p = DenoiserParams::zeros({2, 4, 6, 5});
    p.params.at("den.head.bias").value << 0.3, -0.2;
    RngStream r(4);
    const auto a = denoiser_forward(r.normal_matrix(3, 2), 5, Condition{}, p);
    const auto b = denoiser_forward(r.normal_matrix(3, 2), 0, std::nullopt, p);
    for (int s = 0; s < 3; ++s) {
        EXPECT_EQ(a(s, 0), 0.3);
        EXPECT_EQ(a(s, 1), -0.2);
    }
    EXPECT_EQ(a, b);
}

TEST(Denoiser, DeterministicAndBatchConsistent) {
    RngStream r(5);
    const DenoiserParams p = DenoiserParams::init({2, 4, 6, 5}, r);
    const Matrix z = r.normal_matrix(3, 2);
    const Condition c{Demographics::from_index(7), 1};
    EXPECT_EQ(denoiser_forward(z, 4, c, p), denoiser_forward(z, 4, c, p));
    std::vector<Matrix> steps;
    for (int s = 0; s < 3; ++s) steps.emplace_back(z.row(s));
    const int ts[1] = {4};
    const auto batch = denoiser_forward_batch(steps, ts, condition_code(c), p);
    for (int s = 0; s < 3; ++s) EXPECT_EQ(batch[static_cast<std::size_t>(s)], Matrix(denoiser_forward(z, 4, c, p).row(s)));
}

TEST(Denoiser, NullTokenDistinctFromConditions) {
    const RowVector null = condition_code(std::nullopt);
    for (int g = 0; g < kSubgroups; ++g)
        for (int y = 0; y < 2; ++y) EXPECT_NE(condition_code(Condition{Demographics::from_index(g), y}), null);
}

TEST(Cfg, ZeroGuidanceIsBitIdentical) {
    RngStream r(6);
    const DenoiserParams p = DenoiserParams::init({2, 4, 6, 5}, r);
    const Matrix z = r.normal_matrix(4, 2);
    const Condition c{Demographics::from_index(3), 0};
    EXPECT_EQ(cfg_eps(z, 7, c, 0.0, p), denoiser_forward(z, 7, c, p));
}

TEST(Cfg, EqualBranchesAreFixedPoint) {
    RngStream r(7);
    DenoiserParams p = DenoiserParams::init({2, 4, 6, 5}, r);
    p.params.at("den.cond_embed").value.setZero();
    const Matrix z = r.normal_matrix(4, 2);
    const Condition c{Demographics::from_index(9), 1};
    const Matrix base = denoiser_forward(z, 2, c, p);
    for (double w : {0.5, 1.0, 3.0}) EXPECT_LT((cfg_eps(z, 2, c, w, p) - base).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Cfg, UnitGuidanceComponentwise) {
    RngStream r(8);
    const DenoiserParams p = DenoiserParams::init({2, 4, 6, 5}, r);
    const Matrix z = r.normal_matrix(4, 2);
    const Condition c{Demographics::from_index(20), 1};
    const Matrix cond = denoiser_forward(z, 3, c, p);
    const Matrix null = denoiser_forward(z, 3, std::nullopt, p);
    const Matrix g = cfg_eps(z, 3, c, 1.0, p);
    for (Eigen::Index i = 0; i < g.size(); ++i) EXPECT_NEAR(g(i), 2.0 * cond(i) - null(i), 1e-15);
}

TEST(DiffusionLoss, ZeroLambdasAreBaseLossExactly) {
    RngStream r(9);
    const auto z = test::random_latents(6, 3, 2, r);
    const auto c = test::random_conditions(6, r);
    DenoiserParams p = DenoiserParams::init({2, 4, 4, 4}, r);
    const auto s = make_schedule(5, 0.01, 0.3);
    RngStream a(10);
    const auto t = diffusion_loss_enhanced(z, c, p, s, DiffusionWeights{}, 0.0, a);
    EXPECT_EQ(t.total, t.base);
    EXPECT_EQ(t.null_conditions, 0);
}

TEST(DiffusionLoss, BaseTermMatchesIndependentRecomputation) {
    RngStream r(11);
    const auto z = test::random_latents(5, 3, 2, r);
    const auto c = test::random_conditions(5, r);
    DenoiserParams p = DenoiserParams::init({2, 4, 4, 4}, r);
    const auto s = make_schedule(5, 0.01, 0.3);
    RngStream a(12);
    const auto t = diffusion_loss_enhanced(z, c, p, s, DiffusionWeights{}, 0.5, a);
    RngStream b(12);
    const auto draws = draw_diffusion_noise(5, 3, 2, s, 0.5, b);
    double sq = 0.0;
    int nulls = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        Matrix eps(3, 2);
        for (int k = 0; k < 3; ++k) eps.row(k) = draws.eps.block(static_cast<Eigen::Index>(i), k * 2, 1, 2);
        const int step = draws.steps[i];
        const Matrix zt = q_sample(z[i], step, eps, s);
        const auto cond = draws.drop[i] ? std::nullopt : std::optional<Condition>(c[i]);
        nulls += draws.drop[i] ? 1 : 0;
        sq += (denoiser_forward(zt, step, cond, p) - eps).squaredNorm();
        // A denoiser that returns the true noise has zero base loss.
        EXPECT_EQ((eps - eps).squaredNorm(), 0.0);
    }
    EXPECT_NEAR(t.base, sq / (5.0 * 6.0), 1e-12);
    EXPECT_EQ(t.null_conditions, nulls);
}

TEST(DiffusionLoss, DropsEveryConditionAtPUncondOne) {
    RngStream r(13);
    const auto z = test::random_latents(8, 2, 2, r);
    const auto c = test::random_conditions(8, r);
    DenoiserParams p = DenoiserParams::init({2, 4, 4, 4}, r);
    const auto s = make_schedule(5, 0.01, 0.3);
    RngStream a(14);
    EXPECT_EQ(diffusion_loss_enhanced(z, c, p, s, DiffusionWeights{}, 0.999999999, a).null_conditions, 8);
}

TEST(DiffusionLoss, GradientMatchesFiniteDifferences) {
    RngStream cfg(15);
    for (int k = 0; k < 20; ++k) {
        const int T = 1 + static_cast<int>(cfg.uniform_index(3));
        const int d = 1 + static_cast<int>(cfg.uniform_index(2));
        const int H = 2 + static_cast<int>(cfg.uniform_index(3));
        const std::size_t n = 2 + cfg.uniform_index(4);
        RngStream r = cfg.child("instance", static_cast<std::uint64_t>(k));
        const auto z = test::random_latents(n, T, d, r);
        const auto c = test::random_conditions(n, r);
        const DenoiserParams p = DenoiserParams::init({d, H, 4, 3}, r);
        const auto s = make_schedule(5, 0.02, 0.4);
        const DiffusionWeights variants[] = {
            {0.0, 0.0, 0.1, 0.0},  // base only
            {1.0, 0.0, 0.1, 1.7},  // + MMD
            {0.0, 1.0, 0.3, 0.0},  // + consistency
            {0.5, 0.5, 0.1, 0.8},
        };
        for (const auto& w : variants) {
            const double err = test::diffusion_gradient_error(z, c, p, s, w, 0.3, 400 + k);
            EXPECT_LT(err, 1e-4) << "config " << k << " T=" << T << " d=" << d << " H=" << H << " mmd=" << w.mmd
                                 << " cons=" << w.consistency;
        }
    }
}

TEST(Sampling, ZeroDenoiserSingleStepClosedForm) {
    GeneratorBundle b;
    b.meta.steps = 3;
    b.denoiser = DenoiserParams::zeros({2, 4, 4, 4});
    b.denoiser.params.at("den.head.bias").value << 0.4, -0.1;
    b.schedule = make_schedule(1, 0.2, 0.2);
    b.guidance = 1.0;
    const Condition c{Demographics::from_index(1), 1};
    RngStream rng(16);
    const Matrix z0 = sample_latent(c, b, rng);
    // One reverse step from z ~ N(0, I) with eps_hat = bias and no added noise:
    // z0 = (z - beta / sqrt(1 - alpha_bar) * eps_hat) / sqrt(alpha).
    RngStream noise = RngStream(16).child("sample", 0);
    const double coef = 0.2 / std::sqrt(1.0 - 0.8);
    for (int s = 0; s < 3; ++s)
        for (int k = 0; k < 2; ++k) {
            const double z = noise.normal();
            const double eps = k == 0 ? 0.4 : -0.1;
            EXPECT_NEAR(z0(s, k), (z - coef * eps) / std::sqrt(0.8), 1e-14);
        }
}

TEST(Sampling, FixedSeedIsReproducible) {
    const auto& toy = TrainedToy::get();
    const auto conds = conditions(toy.train_raw);
    RngStream a(17), b(17);
    EXPECT_EQ(sample_latent(conds[0], toy.gen.bundle, a), sample_latent(conds[0], toy.gen.bundle, b));
    RngStream c(18), d(18);
    const std::span<const Condition> first(conds.data(), 20);
    EXPECT_EQ(generate(toy.gen.bundle, first, c), generate(toy.gen.bundle, first, d));
}

TEST(Sampling, ChunkingDoesNotChangeSamples) {
    const auto& toy = TrainedToy::get();
    const auto conds = conditions(toy.train_raw);
    const std::span<const Condition> first(conds.data(), 9);
    RngStream a(19), b(19);
    const auto x = sample_latents(first, toy.gen.bundle, a, 512), y = sample_latents(first, toy.gen.bundle, b, 4);
    // Same noise per sample; only the GEMM blocking differs between chunk sizes.
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT((x[i] - y[i]).cwiseAbs().maxCoeff(), 1e-10) << i;
}

TEST(Sampling, LatentMeansMatchTraining) {
    const auto& toy = TrainedToy::get();
    const auto conds = conditions(toy.train_raw);
    RngStream rng(20);
    const auto samples = sample_latents(conds, toy.gen.bundle, rng);
    ASSERT_EQ(samples.size(), 1000u);
    const Eigen::Index T = samples[0].rows(), d = samples[0].cols();
    Matrix ms = Matrix::Zero(T, d), mt = Matrix::Zero(T, d);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ms += samples[i];
        mt += toy.latents[i];
    }
    ms /= 1000.0;
    mt /= 1000.0;
    // Per latent dimension, pooled over sequence steps, within half a training sd.
    for (Eigen::Index k = 0; k < d; ++k) {
        double sq = 0.0;
        for (const auto& z : toy.latents) sq += (z.col(k).array() - mt.col(k).mean()).square().sum();
        const double sd = std::sqrt(sq / (1000.0 * static_cast<double>(T)));
        EXPECT_NEAR(ms.col(k).mean(), mt.col(k).mean(), 0.5 * sd) << k;
    }
}

TEST(Sampling, ConditionChangesTrainedPrediction) {
    const auto& toy = TrainedToy::get();
    RngStream r(21);
    const Matrix z = r.normal_matrix(8, 8);
    const Matrix a = denoiser_forward(z, 50, Condition{Demographics::from_index(0), 0}, toy.gen.bundle.denoiser);
    const Matrix b = denoiser_forward(z, 50, Condition{Demographics::from_index(31), 1}, toy.gen.bundle.denoiser);
    EXPECT_GT((a - b).norm(), 1e-6);
}

TEST(Generate, SizeConditionsAndFeatureMeans) {
    const auto& toy = TrainedToy::get();
    const auto conds = conditions(toy.train_raw);
    RngStream rng(22);
    const Cohort s = generate(toy.gen.bundle, conds, rng);
    ASSERT_EQ(s.size(), conds.size());
    EXPECT_EQ(conditions(s), conds);
    EXPECT_NO_THROW(validate(s));
    const auto real = compute_norm_stats(toy.train_raw);
    const auto synth = compute_norm_stats(s);
    for (int f = 0; f < s.meta.features; ++f)
        EXPECT_LT(std::abs(synth.mean[static_cast<std::size_t>(f)] - real.mean[static_cast<std::size_t>(f)]),
                  0.5 * real.sd[static_cast<std::size_t>(f)])
            << s.meta.feature_names[static_cast<std::size_t>(f)];
}

TEST(TrainDiffusion, LossDropsOverFirst500Steps) {
    const auto& toy = TrainedToy::get();
    const auto conds = conditions(toy.train_raw);
    DiffusionTrainConfig cfg;
    cfg.dims = {8, 32, 16, 16};
    cfg.epochs = 32;  // 16 batches of 64 per epoch
    const auto res = train_diffusion(toy.latents, conds, cfg, 23);
    ASSERT_GE(res.step_losses.size(), 500u);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 20; ++i) {
        head += res.step_losses[static_cast<std::size_t>(i)];
        tail += res.step_losses[static_cast<std::size_t>(480 + i)];
    }
    EXPECT_LE(tail, 0.7 * head) << head / 20 << " -> " << tail / 20;
}

TEST(TrainDiffusion, SeedRepeatAndNoNullToken) {
    RngStream r(24);
    const auto z = test::random_latents(40, 3, 2, r);
    const auto c = test::random_conditions(40, r);
    DiffusionTrainConfig cfg;
    cfg.dims = {2, 8, 4, 4};
    cfg.epochs = 3;
    cfg.batch = 16;
    cfg.p_uncond = 0.0;
    const auto a = train_diffusion(z, c, cfg, 25), b = train_diffusion(z, c, cfg, 25);
    EXPECT_EQ(a.params, b.params);
    for (const auto& e : a.log) EXPECT_EQ(e.mean.null_conditions, 0);
}

TEST(TrainDiffusion, AlignmentGridIsTrainable) {
    const auto& toy = TrainedToy::get();
    const auto conds = conditions(toy.train_raw);
    for (double lam : {0.0, 0.1, 0.5}) {
        DiffusionTrainConfig cfg;
        cfg.dims = {8, 16, 8, 8};
        cfg.epochs = 3;
        cfg.weights.mmd = lam;
        cfg.weights.consistency = lam;
        const auto res = train_diffusion(toy.latents, conds, cfg, 26);
        EXPECT_TRUE(res.params.params.all_finite()) << lam;
        EXPECT_LT(res.log.back().mean.total, res.log.front().mean.total * 1.5) << lam;
    }
}

TEST(Rejection, AlwaysTargetTakesOneTry) {
    const Condition target{Demographics::from_index(4), 1};
    auto sampler = [&] {
        PatientRecord r;
        r.condition = target;
        return r;
    };
    EXPECT_EQ(rejection_sample_conditional(sampler, target, 10).tries, 1);
}

TEST(Rejection, GeometricMeanTries) {
    const Condition target{Demographics::from_index(4), 1};
    RngStream rng(27);
    auto sampler = [&] {
        PatientRecord r;
        r.condition = rng.bernoulli(0.25) ? target : Condition{Demographics::from_index(5), 0};
        return r;
    };
    double total = 0.0;
    for (int i = 0; i < 1000; ++i) total += rejection_sample_conditional(sampler, target, 10000).tries;
    // Geometric(0.25): mean 4, sd sqrt(0.75) / 0.25 = 3.46; standard error over 1000 is 0.11.
    EXPECT_NEAR(total / 1000.0, 4.0, 0.35);
}

TEST(Rejection, ExhaustionCarriesRateEstimate) {
    const Condition target{Demographics::from_index(4), 1};
    auto never = [] { return PatientRecord{}; };
    try {
        (void)rejection_sample_conditional(never, target, 100);
        FAIL() << "expected exhaustion";
    } catch (const RareConditionError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::RareCondition);
        EXPECT_EQ(e.tries(), 100);
        EXPECT_EQ(e.acceptance_rate(), 0.0);
        EXPECT_NEAR(e.acceptance_upper_bound(), 0.03, 1e-15);
    }
}
