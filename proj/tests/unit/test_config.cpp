#include "fixtures.hpp"

#include "tadiff/checkpoint.hpp"
#include "tadiff/config.hpp"
#include "tadiff/error.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace tadiff;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected a tadiff::Error";
    return ErrorKind::Io;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, DefaultsMatchLibraryDefaults) {
    const auto c = RunConfig::defaults();
    EXPECT_EQ(c.task(), "mortality");
    EXPECT_EQ(c.classifier(), ClassifierConfig{});
    const auto g = c.generator();
    EXPECT_EQ(g.vae.epochs, VaeTrainConfig{}.epochs);
    EXPECT_EQ(g.diffusion.beta_max, DiffusionTrainConfig{}.beta_max);
    EXPECT_EQ(g.config_hash, c.hash());
    EXPECT_EQ(c.grid(), default_weight_grid());
    const auto s = c.split(3);
    EXPECT_EQ(s.train, 0.45);
    EXPECT_EQ(s.seed, 3u);
    EXPECT_EQ(c.toy_preset().n, 4000);
}

TEST(Config, OverridesParseJsonValues) {
    auto c = RunConfig::defaults();
    c.apply_override("vae.epochs=7");
    c.apply_override("classifier.lr=0.001");
    c.apply_override("task=los_binary");
    EXPECT_EQ(c.generator().vae.epochs, 7);
    EXPECT_EQ(c.classifier().lr, 0.001);
    EXPECT_EQ(c.task(), "los_binary");
    EXPECT_EQ(c.toy_preset().task, "los_binary");
}

TEST(Config, UnknownKeysAndTypeChangesAreRejected) {
    auto c = RunConfig::defaults();
    EXPECT_EQ(kind_of([&] { c.apply_override("vae.epoch=3"); }), ErrorKind::Config);
    EXPECT_EQ(kind_of([&] { c.apply_override("vae.epochs=\"many\""); }), ErrorKind::Config);
    EXPECT_EQ(kind_of([&] { c.apply_override("vae.epochs=2.5"); }), ErrorKind::Config);
    EXPECT_EQ(kind_of([&] { c.merge(Json{{"bogus", 1}}); }), ErrorKind::Config);
    EXPECT_EQ(kind_of([&] { c.apply_override("novalue"); }), ErrorKind::Config);
}

TEST(Config, InvalidValuesAreRejected) {
    auto c = RunConfig::defaults();
    c.apply_override("split.train=0.9");
    EXPECT_EQ(kind_of([&] { (void)c.split(0); }), ErrorKind::Config);
    auto d = RunConfig::defaults();
    d.apply_override("task=sepsis");
    EXPECT_EQ(kind_of([&] { (void)d.task(); }), ErrorKind::Config);
}

TEST(Config, HashIgnoresPathsOnly) {
    auto a = RunConfig::defaults(), b = RunConfig::defaults();
    b.apply_override("paths.dataset=/tmp/x");
    EXPECT_EQ(a.hash(), b.hash());
    b.apply_override("diffusion.guidance=2.0");
    EXPECT_NE(a.hash(), b.hash());
    // An integer-valued float keeps its type and hash.
    auto c = RunConfig::defaults();
    c.apply_override("diffusion.guidance=0");
    EXPECT_EQ(a.hash(), c.hash());
}

TEST(Config, LoadFromFile) {
    const auto dir = test::scratch_dir("config_load");
    std::ofstream(dir / "run.json") << R"({"toy": {"n": 500}, "protocol": {"n_models": 3}})";
    const auto c = RunConfig::load(dir / "run.json");
    EXPECT_EQ(c.toy_preset().n, 500);
    EXPECT_EQ(c.protocol().n_models, 3);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_EQ(kind_of([&] { (void)RunConfig::load(dir / "bad.json"); }), ErrorKind::Config);
}

TEST(Checkpoint, ParamsRoundTripExactly) {
    RngStream r(1);
    const VaeParams vae = VaeParams::init({3, 2, 5}, r);
    const Json j = vae_to_json(vae, 99);
    const VaeParams back = vae_from_json(Json::parse(j.dump()));
    EXPECT_EQ(back, vae);
}

TEST(Checkpoint, ShapeMismatchIsSchemaError) {
    RngStream r(2);
    const VaeParams vae = VaeParams::init({3, 2, 5}, r);
    Json j = vae_to_json(vae, 1);
    j["params"][0]["rows"] = 1;
    EXPECT_EQ(kind_of([&] { (void)vae_from_json(j); }), ErrorKind::Schema);
}

TEST(Checkpoint, BundleRoundTripExactly) {
    RngStream r(3);
    GeneratorBundle b;
    b.vae = VaeParams::init({2, 3, 4}, r);
    b.denoiser = DenoiserParams::init({3, 4, 4, 4}, r);
    b.schedule = make_schedule(17, 1e-3, 0.2);
    b.guidance = 1.5;
    const Cohort c = test::random_cohort(4, 5, 2, 4);
    b.meta = c.meta;
    b.meta.fill_values = {0.1, 1.0 / 7.0};
    b.norm = NormStats{{80.0, 1.0 / 3.0}, {10.0, 2.5}};
    b.config_hash = 0xfedcba9876543210ull;
    const auto back = bundle_from_json(Json::parse(bundle_to_json(b).dump()));
    EXPECT_EQ(back, b);
}

TEST(Checkpoint, ClassifierRoundTrip) {
    RngStream r(5);
    const GruClassifier m = GruClassifier::init(3, 6, r);
    const Json j = classifier_to_json(m, ClassifierConfig{});
    EXPECT_EQ(classifier_from_json(Json::parse(j.dump())), m);
}

TEST(Checkpoint, WriteIsByteStableAndReadErrorsAreTyped) {
    const auto dir = test::scratch_dir("checkpoint_io");
    RngStream r(6);
    const Json j = vae_to_json(VaeParams::init({2, 2, 3}, r), 5);
    write_json(dir / "a" / "v.json", j);
    write_json(dir / "b.json", read_json(dir / "a" / "v.json", "vae"));
    EXPECT_EQ(slurp(dir / "a" / "v.json"), slurp(dir / "b.json"));
    EXPECT_EQ(kind_of([&] { (void)read_json(dir / "missing.json", "vae"); }), ErrorKind::Prerequisite);
    std::ofstream(dir / "broken.json") << "{";
    EXPECT_EQ(kind_of([&] { (void)read_json(dir / "broken.json", "vae"); }), ErrorKind::Schema);
}

TEST(Errors, ExitCodes) {
    EXPECT_EQ(exit_code(ErrorKind::Config), 2);
    EXPECT_EQ(exit_code(ErrorKind::Input), 2);
    EXPECT_EQ(exit_code(ErrorKind::Schema), 2);
    EXPECT_EQ(exit_code(ErrorKind::Prerequisite), 3);
    EXPECT_EQ(exit_code(ErrorKind::Numeric), 4);
    EXPECT_EQ(exit_code(ErrorKind::UndefinedMetric), 5);
    EXPECT_EQ(exit_code(ErrorKind::Io), 1);
}
