#include "fixtures.hpp"

#include "tadiff/data.hpp"
#include "tadiff/error.hpp"
#include "tadiff/toy.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

using namespace tadiff;

namespace {

constexpr double kMiss = std::numeric_limits<double>::quiet_NaN();

ErrorKind kind_of(const std::function<void()>& fn, std::string* message = nullptr) {
    try {
        fn();
    } catch (const Error& e) {
        if (message) *message = e.what();
        return e.kind();
    }
    ADD_FAILURE() << "expected a tadiff::Error";
    return ErrorKind::Io;
}

Cohort cycled_cohort(std::size_t n) {
    Cohort c = test::random_cohort(n, 2, 1, 99);
    for (std::size_t i = 0; i < n; ++i) {
        c.records[i].condition.demo = Demographics::from_index(static_cast<int>(i % kSubgroups));
        c.records[i].condition.outcome = static_cast<int>((i / kSubgroups) % 2);
    }
    return c;
}

std::set<std::int64_t> ids(const Cohort& c) {
    std::set<std::int64_t> out;
    for (const auto& r : c.records) out.insert(r.id);
    return out;
}

}  // namespace

TEST(ForwardFill, CarriesLastObservation) {
    Matrix raw(4, 1);
    raw << 5.0, kMiss, kMiss, 7.0;
    const std::vector<double> fill{0.0};
    const auto out = forward_fill(raw, fill);
    Matrix values(4, 1), mask(4, 1);
    values << 5, 5, 5, 7;
    mask << 1, 0, 0, 1;
    EXPECT_EQ(out.values, values);
    EXPECT_EQ(out.mask, mask);
}

TEST(ForwardFill, FullyObservedUnchanged) {
    Matrix raw(3, 2);
    raw << 1, 2, 3, 4, 5, 6;
    const std::vector<double> fill{0.0, 0.0};
    const auto out = forward_fill(raw, fill);
    EXPECT_EQ(out.values, raw);
    EXPECT_EQ(out.mask, Matrix::Ones(3, 2));
}

TEST(ForwardFill, ColdStartUsesMedian) {
    Matrix raw(2, 1);
    raw << kMiss, 3.0;
    const std::vector<double> fill{2.0};
    const auto out = forward_fill(raw, fill);
    EXPECT_EQ(out.values(0, 0), 2.0);
    EXPECT_EQ(out.values(1, 0), 3.0);
    EXPECT_EQ(out.mask(0, 0), 0.0);
    EXPECT_EQ(out.mask(1, 0), 1.0);
}

TEST(ForwardFill, FullyMissingColumnIsAllMedian) {
    Matrix raw(3, 1);
    raw << kMiss, kMiss, kMiss;
    const std::vector<double> fill{-1.5};
    const auto out = forward_fill(raw, fill);
    EXPECT_EQ(out.values, Matrix::Constant(3, 1, -1.5));
    EXPECT_EQ(out.mask, Matrix::Zero(3, 1));
}

TEST(ForwardFill, Idempotent) {
    const Cohort c = test::random_cohort(30, 6, 3, 5, 0.5);
    for (const auto& r : c.records) {
        EXPECT_EQ(refill(r.values, r.mask, c.meta.fill_values), r.values);
        const auto again = forward_fill(r.values, c.meta.fill_values);
        EXPECT_EQ(again.values, r.values);
    }
}

TEST(ObservedMedians, PerFeature) {
    Matrix a(2, 2), b(2, 2);
    a << 1, kMiss, 3, kMiss;
    b << 5, kMiss, kMiss, kMiss;
    const std::vector<Matrix> raw{a, b};
    const auto m = observed_medians(raw);
    EXPECT_EQ(m[0], 3.0);
    EXPECT_EQ(m[1], 0.0);
}

TEST(Normalize, ExplicitStats) {
    Cohort c = test::random_cohort(1, 1, 1, 1, 1.0);
    c.records[0].values(0, 0) = 90.0;
    const NormStats s{{80.0}, {10.0}};
    const Cohort z = normalize(c, s);
    EXPECT_EQ(z.records[0].values(0, 0), 1.0);
    ASSERT_TRUE(z.meta.norm.has_value());
}

TEST(Normalize, RoundTrip) {
    Cohort c = test::random_cohort(40, 5, 3, 8, 0.7);
    for (auto& r : c.records) r.values = (r.values.array() * 12.0 + 70.0).matrix();
    for (auto& f : c.meta.fill_values) f = 70.0;
    const Cohort back = denormalize(normalize(c));
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_LT((back.records[i].values - c.records[i].values).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_EQ(back.records[i].mask, c.records[i].mask);
    }
}

TEST(Normalize, StatsUseObservedCellsOnly) {
    Cohort c = test::random_cohort(50, 4, 2, 2, 0.6);
    const auto s = compute_norm_stats(c);
    double sum = 0.0, n = 0.0;
    for (const auto& r : c.records)
        for (int t = 0; t < 4; ++t)
            if (r.mask(t, 0) != 0.0) {
                sum += r.values(t, 0);
                n += 1.0;
            }
    EXPECT_NEAR(s.mean[0], sum / n, 1e-12);
}

TEST(Normalize, ZeroSdNamesFeature) {
    Cohort c = test::random_cohort(10, 3, 2, 3, 1.0);
    for (auto& r : c.records) r.values.col(1).setConstant(4.0);
    std::string msg;
    EXPECT_EQ(kind_of([&] { (void)normalize(c); }, &msg), ErrorKind::Input);
    EXPECT_NE(msg.find("x1"), std::string::npos);
}

TEST(Split, ThousandBalancedRecords) {
    const Cohort c = cycled_cohort(1000);
    const auto s = stratified_split(c, SplitSpec{0.45, 0.45, 0.10, 3});
    EXPECT_EQ(s.train.size(), 450u);
    EXPECT_EQ(s.holdout.size(), 450u);
    EXPECT_EQ(s.holdout_val.size(), 100u);
}

TEST(Split, DisjointAndExhaustive) {
    const Cohort c = test::random_cohort(537, 2, 1, 17);
    const auto s = stratified_split(c, SplitSpec{0.45, 0.45, 0.10, 4});
    const auto a = ids(s.train), b = ids(s.holdout), v = ids(s.holdout_val);
    std::set<std::int64_t> all;
    all.insert(a.begin(), a.end());
    all.insert(b.begin(), b.end());
    all.insert(v.begin(), v.end());
    EXPECT_EQ(all.size(), c.size());
    EXPECT_EQ(a.size() + b.size() + v.size(), c.size());
}

TEST(Split, PerStratumQuotaWithinOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Cohort c = test::random_cohort(100 + 37 * seed, 1, 1, 1000 + seed);
        const auto s = stratified_split(c, SplitSpec{0.45, 0.45, 0.10, seed});
        std::map<int, std::array<double, 4>> counts;
        for (const auto& r : c.records) counts[stratum_key(r.condition)][3] += 1.0;
        const Cohort* parts[3] = {&s.train, &s.holdout, &s.holdout_val};
        for (int k = 0; k < 3; ++k)
            for (const auto& r : parts[k]->records) counts[stratum_key(r.condition)][static_cast<std::size_t>(k)] += 1.0;
        const double frac[3] = {0.45, 0.45, 0.10};
        for (const auto& [key, n] : counts)
            for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(n[static_cast<std::size_t>(k)] - n[3] * frac[k]), 1.0) << key;
    }
}

TEST(Split, SingletonStratumLandsOnce) {
    Cohort c = test::random_cohort(1, 1, 1, 3);
    const auto s = stratified_split(c, SplitSpec{0.45, 0.45, 0.10, 0});
    EXPECT_EQ(s.train.size() + s.holdout.size() + s.holdout_val.size(), 1u);
}

TEST(Split, InvariantToRecordOrder) {
    const Cohort c = test::random_cohort(300, 1, 1, 23);
    Cohort shuffled = c;
    RngStream r(5);
    r.shuffle(shuffled.records);
    const auto a = stratified_split(c, SplitSpec{0.45, 0.45, 0.10, 9});
    const auto b = stratified_split(shuffled, SplitSpec{0.45, 0.45, 0.10, 9});
    EXPECT_EQ(ids(a.train), ids(b.train));
    EXPECT_EQ(ids(a.holdout), ids(b.holdout));
    EXPECT_EQ(a.train, b.train);
}

TEST(Split, FractionsMustSumToOne) {
    const Cohort c = test::random_cohort(10, 1, 1, 3);
    EXPECT_EQ(kind_of([&] { (void)stratified_split(c, SplitSpec{0.5, 0.5, 0.5, 0}); }), ErrorKind::Input);
}

TEST(Partition, ThirtyTwoGroupsCoverCohort) {
    const Cohort c = test::random_cohort(640, 1, 1, 4);
    const auto p = subgroup_partition(c);
    EXPECT_EQ(p.size(), 32u);
    std::size_t total = 0;
    for (std::size_t g = 0; g < p.size(); ++g) {
        total += p[g].size();
        for (auto i : p[g]) EXPECT_EQ(c.records[i].condition.demo.subgroup_index(), static_cast<int>(g));
    }
    EXPECT_EQ(total, c.size());
}

TEST(Partition, UniformDemographicsGiveEqualGroups) {
    // Draws from the categorical uniform: each group count is Binomial(n, 1/32).
    const std::size_t n = 32000;
    const Cohort c = test::random_cohort(n, 1, 1, 6);
    const auto p = subgroup_partition(c);
    const double sd = std::sqrt(n * (1.0 / 32) * (31.0 / 32));
    for (const auto& g : p) EXPECT_LT(std::abs(static_cast<double>(g.size()) - n / 32.0), 5.0 * sd);
}

TEST(Partition, SinglePatientOneGroup) {
    const Cohort c = test::random_cohort(1, 1, 1, 7);
    int non_empty = 0;
    for (const auto& g : subgroup_partition(c)) non_empty += g.empty() ? 0 : 1;
    EXPECT_EQ(non_empty, 1);
}

TEST(Demographics, IndexRoundTrip) {
    for (int g = 0; g < kSubgroups; ++g) EXPECT_EQ(Demographics::from_index(g).subgroup_index(), g);
}

TEST(Split8020, HundredRecords) {
    const Cohort c = test::random_cohort(100, 1, 1, 8);
    const auto s = subgroup_80_20_split(c, 1);
    EXPECT_EQ(s.large.size(), 80u);
    EXPECT_EQ(s.small.size(), 20u);
}

TEST(Split8020, FiveRecordsAnyOutcomeMix) {
    for (int positives = 0; positives <= 5; ++positives) {
        Cohort c = test::random_cohort(5, 1, 1, 9);
        for (int i = 0; i < 5; ++i) c.records[static_cast<std::size_t>(i)].condition.outcome = i < positives ? 1 : 0;
        const auto s = subgroup_80_20_split(c, 2);
        EXPECT_EQ(s.large.size(), 4u) << positives;
        EXPECT_EQ(s.small.size(), 1u) << positives;
        EXPECT_EQ(s.sparse_class, positives < 2 || positives > 3);
    }
}

TEST(Split8020, DeterministicAndDisjoint) {
    const Cohort c = test::random_cohort(37, 1, 1, 10);
    const auto a = subgroup_80_20_split(c, 5), b = subgroup_80_20_split(c, 5);
    EXPECT_EQ(a.large, b.large);
    EXPECT_EQ(a.small, b.small);
    const auto l = ids(a.large), s = ids(a.small);
    for (auto id : s) EXPECT_EQ(l.count(id), 0u);
    EXPECT_EQ(l.size() + s.size(), 37u);
}

TEST(Storage, SaveLoadBitExact) {
    Cohort c = test::random_cohort(10, 4, 3, 12, 0.6);
    c.meta.fill_values = {0.125, -3.0, 1.0 / 3.0};
    for (auto& r : c.records) r.values = refill(r.values, r.mask, c.meta.fill_values);
    const auto dir = test::scratch_dir("storage_roundtrip");
    save_cohort(c, dir);
    const Cohort back = load_cohort(dir);
    EXPECT_EQ(back.size(), 10u);
    EXPECT_EQ(back, c);
}

TEST(Storage, ShortRecordIsSchemaErrorNamingRecord) {
    Cohort c = test::random_cohort(3, 24, 2, 13);
    const auto dir = test::scratch_dir("storage_short");
    save_cohort(c, dir);
    // Drop the last time step of record 1.
    std::ifstream in(dir / "records.ndjson");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    in.close();
    auto j = nlohmann::json::parse(lines[1]);
    auto& v = j["values"];
    v.erase(v.end() - 2, v.end());
    lines[1] = j.dump();
    std::ofstream out(dir / "records.ndjson");
    for (const auto& l : lines) out << l << '\n';
    out.close();
    std::string msg;
    EXPECT_EQ(kind_of([&] { (void)load_cohort(dir); }, &msg), ErrorKind::Schema);
    EXPECT_NE(msg.find("record 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("23"), std::string::npos) << msg;
}

TEST(Storage, UnknownEthnicityIsVocabularyError) {
    Cohort c = test::random_cohort(2, 2, 1, 14);
    const auto dir = test::scratch_dir("storage_vocab");
    save_cohort(c, dir);
    std::ifstream in(dir / "records.ndjson");
    std::string first, second;
    std::getline(in, first);
    std::getline(in, second);
    in.close();
    auto j = nlohmann::json::parse(second);
    j["ethnicity"] = "Hispanic";
    std::ofstream out(dir / "records.ndjson");
    out << first << '\n' << j.dump() << '\n';
    out.close();
    std::string msg;
    EXPECT_EQ(kind_of([&] { (void)load_cohort(dir); }, &msg), ErrorKind::Schema);
    EXPECT_NE(msg.find("Hispanic"), std::string::npos) << msg;
}

TEST(Storage, MissingDirectoryIsPrerequisite) {
    EXPECT_EQ(kind_of([] { (void)load_cohort("/nonexistent/tadiff"); }), ErrorKind::Prerequisite);
}

TEST(Toy, DegenerateProcessIsConstantAtSubgroupMean) {
    ToyPreset p = default_toy_preset();
    p.n = 200;
    for (auto& r : p.rho) r = 0.0;
    for (auto& s : p.innovation_sd) s = 0.0;
    for (auto& m : p.missing_rate) m = 0.0;
    const Cohort c = synth_toy_cohort(p, 3);
    ASSERT_EQ(c.size(), 200u);
    for (const auto& r : c.records)
        for (int f = 0; f < p.features(); ++f)
            for (int t = 0; t < p.steps; ++t)
                ASSERT_DOUBLE_EQ(r.values(t, f), p.subgroup_mean(f, r.condition.demo));
}

TEST(Toy, LagOneAutocorrelationMatchesRho) {
    ToyPreset p = default_toy_preset();
    p.n = 12500;  // n * T = 1e5
    const ToyProcess proc(p);
    RngStream rng(31);
    const int F = p.features();
    std::vector<double> num(static_cast<std::size_t>(F)), den(static_cast<std::size_t>(F));
    for (int i = 0; i < p.n; ++i) {
        const auto demo = proc.sample_demographics(rng);
        const auto draw = proc.sample(demo, rng);
        for (int f = 0; f < F; ++f) {
            const double mu = p.subgroup_mean(f, demo);
            for (int t = 0; t < p.steps; ++t) {
                const double x = draw.truth(t, f) - mu;
                den[static_cast<std::size_t>(f)] += x * x;
                if (t > 0) num[static_cast<std::size_t>(f)] += x * (draw.truth(t - 1, f) - mu);
            }
        }
    }
    for (int f = 0; f < F; ++f) {
        // Each series contributes T-1 lagged pairs and T squared terms.
        const double r = (num[static_cast<std::size_t>(f)] / (p.steps - 1)) / (den[static_cast<std::size_t>(f)] / p.steps);
        EXPECT_NEAR(r, p.rho[static_cast<std::size_t>(f)], 0.05) << p.feature_names[static_cast<std::size_t>(f)];
    }
}

TEST(Toy, OutcomeRateMatchesModelAverage) {
    const ToyProcess proc(default_toy_preset());
    RngStream rng(32);
    double events = 0.0, prob = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto demo = proc.sample_demographics(rng);
        const auto draw = proc.sample(demo, rng);
        events += draw.outcome;
        prob += draw.outcome_probability;
        ASSERT_DOUBLE_EQ(draw.outcome_probability, proc.outcome_probability(draw.truth, demo));
    }
    EXPECT_NEAR(events / n, prob / n, 0.02);
}

TEST(Toy, CohortIsValidAndDeterministic) {
    ToyPreset p = default_toy_preset();
    p.n = 300;
    const Cohort a = synth_toy_cohort(p, 4), b = synth_toy_cohort(p, 4);
    EXPECT_EQ(a, b);
    EXPECT_NO_THROW(validate(a));
    EXPECT_NE(a, synth_toy_cohort(p, 5));
}

TEST(Toy, PresetJsonRoundTrip) {
    const ToyPreset p = default_toy_preset();
    const std::string text = toy_preset_to_json(p);
    EXPECT_EQ(toy_preset_to_json(toy_preset_from_json(text)), text);
}

TEST(Toy, InvalidPresetIsConfigError) {
    ToyPreset p = default_toy_preset();
    p.rho[0] = 1.0;
    EXPECT_EQ(kind_of([&] { validate(p); }), ErrorKind::Config);
}

TEST(Toy, ConditionalSamplingHonoursConditions) {
    ToyPreset p = default_toy_preset();
    p.n = 200;
    const Cohort ref = synth_toy_cohort(p, 6);
    const ToyProcess proc(p);
    RngStream rng(7);
    const auto conds = conditions(ref);
    const Cohort s = proc.sample_conditional(conds, ref.meta, rng);
    EXPECT_EQ(conditions(s), conds);
}
