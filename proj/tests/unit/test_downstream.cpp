#include "fixtures.hpp"
#include "gradients.hpp"

#include "tadiff/downstream.hpp"
#include "tadiff/error.hpp"
#include "tadiff/toy.hpp"

#include <gtest/gtest.h>

using namespace tadiff;

namespace {

/// Outcome is the sign of the first feature's mean, shifted so the classes separate.
Cohort separable(std::size_t n, std::uint64_t seed) {
    Cohort c = test::random_cohort(n, 4, 2, seed, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = c.records[i];
        r.condition.outcome = static_cast<int>(i % 2);
        r.values.col(0).array() += r.condition.outcome ? 2.0 : -2.0;
    }
    return c;
}

ClassifierConfig quick(int epochs) {
    ClassifierConfig c;
    c.hidden = 16;
    c.max_epochs = epochs;
    return c;
}

}  // namespace

TEST(Classifier, ZeroWeightsPredictHalf) {
    const GruClassifier m = GruClassifier::zeros(3, 5);
    const Cohort c = test::random_cohort(4, 3, 3, 1);
    for (const auto& r : c.records) EXPECT_EQ(classifier_forward(r, m), 0.5);
}

TEST(Classifier, BatchedPredictionMatchesSingle) {
    RngStream r(2);
    const GruClassifier m = GruClassifier::init(3, 5, r);
    const Cohort c = test::random_cohort(11, 3, 3, 2);
    const auto p = predict(c, m, 4);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(p[i], classifier_forward(c.records[i], m), 1e-12);
}

TEST(Classifier, RandomModelOnRandomLabelsIsChance) {
    RngStream r(3);
    const GruClassifier m = GruClassifier::init(2, 8, r);
    Cohort c = test::random_cohort(2000, 3, 2, 3);
    for (std::size_t i = 0; i < c.size(); ++i) c.records[i].condition.outcome = static_cast<int>(i % 2);
    const double a = evaluate_classifier(m, c);
    EXPECT_GE(a, 0.45);
    EXPECT_LE(a, 0.55);
}

TEST(Classifier, LossGradientMatchesFiniteDifferences) {
    RngStream cfg(4);
    for (int k = 0; k < 20; ++k) {
        const int T = 1 + static_cast<int>(cfg.uniform_index(3));
        const int F = 1 + static_cast<int>(cfg.uniform_index(2));
        const int H = 1 + static_cast<int>(cfg.uniform_index(4));
        const std::size_t n = 1 + cfg.uniform_index(5);
        const Cohort c = test::random_cohort(n, T, F, 50 + k);
        RngStream init = cfg.child("init", static_cast<std::uint64_t>(k));
        EXPECT_LT(test::classifier_gradient_error(c, GruClassifier::init(F, H, init)), 1e-4) << "config " << k;
    }
}

TEST(Classifier, LearnsSeparableData) {
    const Cohort train = separable(400, 5), val = separable(100, 6), test = separable(400, 7);
    const auto t = train_classifier(train, val, quick(10), 8);
    EXPECT_GE(evaluate_classifier(t.model, test), 0.95);
    ASSERT_EQ(t.log.size(), 10u);
    EXPECT_EQ(t.log[static_cast<std::size_t>(t.best_epoch - 1)].val_auroc, t.best_val_auroc);
    for (const auto& e : t.log) EXPECT_LE(e.val_auroc, t.best_val_auroc);
}

TEST(Classifier, KeepsEarliestBestEpoch) {
    const Cohort train = separable(200, 9), val = separable(40, 10);
    const auto t = train_classifier(train, val, quick(8), 11);
    for (int e = 0; e + 1 < t.best_epoch; ++e) EXPECT_LT(t.log[static_cast<std::size_t>(e)].val_auroc, t.best_val_auroc);
}

TEST(Classifier, SeedRepeatIsIdentical) {
    const Cohort train = separable(120, 12), val = separable(30, 13);
    const auto a = train_classifier(train, val, quick(3), 14), b = train_classifier(train, val, quick(3), 14);
    EXPECT_EQ(a.model, b.model);
    EXPECT_EQ(a.best_epoch, b.best_epoch);
    const auto c = train_classifier(train, val, quick(3), 15);
    EXPECT_NE(a.model, c.model);
}

TEST(Classifier, PatienceStopsEarly) {
    const Cohort train = separable(200, 16), val = separable(40, 17);
    ClassifierConfig cfg = quick(40);
    cfg.patience = 2;
    const auto t = train_classifier(train, val, cfg, 18);
    EXPECT_LE(static_cast<int>(t.log.size()), t.best_epoch + 2);
}

TEST(Classifier, SingleClassValidationIsUndefined) {
    const Cohort train = separable(20, 19);
    Cohort val = separable(10, 20);
    for (auto& r : val.records) r.condition.outcome = 1;
    try {
        (void)train_classifier(train, val, quick(1), 1);
        FAIL() << "expected an undefined-metric error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UndefinedMetric);
    }
}

TEST(Classifier, ConfigHashTracksProtocol) {
    const ClassifierConfig a;
    ClassifierConfig b;
    b.lr = 1e-3;
    EXPECT_EQ(classifier_config_hash(a), classifier_config_hash(ClassifierConfig{}));
    EXPECT_NE(classifier_config_hash(a), classifier_config_hash(b));
}

TEST(Discriminator, SameDistributionIsNearChance) {
    ToyPreset p = default_toy_preset();
    p.n = 4000;
    const Cohort all = synth_toy_cohort(p, 21);
    std::vector<std::size_t> first, second;
    for (std::size_t i = 0; i < all.size(); ++i) (i % 2 ? second : first).push_back(i);
    const auto d = train_discriminator(select(all, first), select(all, second), quick(8), 22);
    EXPECT_GE(d.disc_auc, 0.45);
    EXPECT_LE(d.disc_auc, 0.55);
    EXPECT_EQ(d.test_size, 2000u);
}

TEST(Discriminator, LargeShiftIsDetected) {
    ToyPreset p = default_toy_preset();
    p.n = 600;
    const Cohort real = synth_toy_cohort(p, 23);
    Cohort fake = synth_toy_cohort(p, 24);
    const auto stats = compute_norm_stats(real);
    for (auto& r : fake.records)
        for (int f = 0; f < fake.meta.features; ++f)
            r.values.col(f).array() += 5.0 * stats.sd[static_cast<std::size_t>(f)];
    const auto d = train_discriminator(real, fake, quick(5), 25);
    EXPECT_GT(d.disc_auc, 0.95);
}

TEST(Discriminator, MirroredLabelsGiveComplement) {
    ToyPreset p = default_toy_preset();
    p.n = 600;
    const Cohort a = synth_toy_cohort(p, 26);
    Cohort b = synth_toy_cohort(p, 27);
    const auto stats = compute_norm_stats(a);
    for (auto& r : b.records)
        for (int f = 0; f < b.meta.features; ++f) r.values.col(f).array() += 5.0 * stats.sd[static_cast<std::size_t>(f)];
    const auto fwd = train_discriminator(a, b, quick(5), 28);
    const auto mir = train_discriminator(b, a, quick(5), 28, true);
    EXPECT_EQ(fwd.classifier.model, mir.classifier.model);
    EXPECT_NEAR(mir.disc_auc, 1.0 - fwd.disc_auc, 1e-12);
    EXPECT_GT(fwd.disc_auc, 0.9);
}

TEST(Discriminator, RejectsTinyOrMismatchedInputs) {
    const Cohort a = test::random_cohort(3, 2, 2, 29), b = test::random_cohort(10, 2, 2, 30);
    EXPECT_THROW((void)train_discriminator(a, b, quick(1), 1), Error);
    const Cohort c = test::random_cohort(10, 3, 2, 31);
    EXPECT_THROW((void)train_discriminator(b, c, quick(1), 1), Error);
}
