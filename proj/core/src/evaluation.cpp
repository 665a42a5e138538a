#include "tadiff/evaluation.hpp"

#include "tadiff/error.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace tadiff {

namespace {

void report_progress(const EvalProtocol& p, const std::string& msg) {
    if (p.progress) p.progress(msg);
}

void check_raw(const Cohort& c, const char* what) {
    if (c.meta.norm) fail(ErrorKind::Input, std::string(what) + " must be in raw units (found a normalized cohort)");
    if (c.empty()) fail(ErrorKind::Input, std::string(what) + " is empty");
}

void check_protocol(const EvalProtocol& p) {
    if (p.n_synth < 1 || p.n_models < 1 || p.n_split_seeds < 1 || p.n_fidelity_runs < 1)
        fail(ErrorKind::Config, "evaluation protocol counts must be positive");
}

bool two_classes(const Cohort& c) {
    bool pos = false, neg = false;
    for (const auto& r : c.records) (r.outcome() != 0 ? pos : neg) = true;
    return pos && neg;
}

void check_conditions(const Cohort& reference, const Cohort& synthetic, const std::string& source) {
    if (synthetic.size() != reference.size())
        fail(ErrorKind::Input, source + ": produced " + std::to_string(synthetic.size()) + " records for " +
                                   std::to_string(reference.size()) + " conditions");
    for (std::size_t i = 0; i < reference.size(); ++i)
        if (!(synthetic.records[i].condition == reference.records[i].condition))
            fail(ErrorKind::Input, source + ": condition of record " + std::to_string(i) + " not preserved");
}

}  // namespace

// ---------------------------------------------------------------------------
// Sources

BundleGenerator::BundleGenerator(GeneratorBundle bundle, std::string name)
    : bundle_(std::move(bundle)), name_(std::move(name)) {}

Cohort BundleGenerator::generate(const Cohort& reference, RngStream& rng) const {
    if (reference.meta.features != bundle_.meta.features || reference.meta.steps != bundle_.meta.steps)
        fail(ErrorKind::Input, "generator: reference cohort shape differs from the training cohort");
    const auto conds = conditions(reference);
    return tadiff::generate(bundle_, conds, rng);
}

Cohort IdentityGenerator::generate(const Cohort& reference, RngStream&) const { return reference; }

ToyOracleGenerator::ToyOracleGenerator(ToyPreset preset) : process_(std::move(preset)) {}

Cohort ToyOracleGenerator::generate(const Cohort& reference, RngStream& rng) const {
    const auto conds = conditions(reference);
    return process_.sample_conditional(conds, reference.meta, rng);
}

// ---------------------------------------------------------------------------
// Utility

std::vector<Cohort> draw_synthetic_sets(const SyntheticSource& source, const Cohort& reference, int n,
                                        std::uint64_t seed) {
    std::vector<Cohort> out;
    out.reserve(static_cast<std::size_t>(n));
    const RngStream root(seed);
    for (int s = 0; s < n; ++s) {
        RngStream rng = root.child("synthetic", static_cast<std::uint64_t>(s));
        Cohort c = source.generate(reference, rng);
        check_conditions(reference, c, source.name());
        out.push_back(std::move(c));
    }
    return out;
}

ConfidenceInterval paired_gap(std::span<const double> reference, std::span<const SyntheticRun> runs) {
    std::vector<double> diffs;
    diffs.reserve(runs.size());
    for (const auto& run : runs) {
        if (run.model < 0 || static_cast<std::size_t>(run.model) >= reference.size())
            fail(ErrorKind::Input, "paired_gap: run refers to a missing reference model");
        diffs.push_back(reference[static_cast<std::size_t>(run.model)] - run.auroc);
    }
    if (diffs.empty()) return {};
    ConfidenceInterval ci = mean_ci95(diffs);
    if (ci.mean < 0.0) ci = {-ci.mean, -ci.hi, -ci.lo, ci.n_runs};
    return ci;
}

namespace {

UtilityResult run_utility(const SyntheticSource& source, const CohortSplits& raw, const EvalProtocol& protocol,
                          std::uint64_t seed, bool training_arm, bool evaluation_arm) {
    check_protocol(protocol);
    check_raw(raw.train, "training split");
    check_raw(raw.holdout, "holdout split");
    check_raw(raw.holdout_val, "holdout validation split");

    UtilityResult result;
    UtilityReport& rep = result.report;
    rep.task = raw.train.meta.task;
    rep.source = source.name();
    rep.classifier_hash = classifier_config_hash(protocol.classifier);
    rep.seed = seed;
    rep.training_arm = training_arm;
    rep.evaluation_arm = evaluation_arm;
    const RngStream root(seed);
    for (int m = 0; m < protocol.n_models; ++m)
        rep.model_seeds.push_back(root.child("model", static_cast<std::uint64_t>(m)).seed());
    for (int s = 0; s < protocol.n_synth; ++s)
        rep.synthetic_seeds.push_back(root.child("synthetic", static_cast<std::uint64_t>(s)).seed());

    result.norm = compute_norm_stats(raw.train);
    const Cohort train = normalize(raw.train, result.norm);
    const Cohort holdout = normalize(raw.holdout, result.norm);
    const Cohort val = normalize(raw.holdout_val, result.norm);

    report_progress(protocol, "drawing " + std::to_string(protocol.n_synth) + " synthetic sets from " + source.name());
    std::vector<Cohort> synth = draw_synthetic_sets(source, raw.train, protocol.n_synth, seed);
    for (auto& s : synth) s = normalize(s, result.norm);

    const auto& cfg = protocol.classifier;
    if (training_arm) {
        for (int m = 0; m < protocol.n_models; ++m) {
            report_progress(protocol, "TRTR model " + std::to_string(m + 1) + "/" + std::to_string(protocol.n_models));
            const auto model = train_classifier(train, val, cfg, rep.model_seeds[static_cast<std::size_t>(m)]);
            rep.trtr_train.push_back(evaluate_classifier(model.model, holdout));
        }
        for (int s = 0; s < protocol.n_synth; ++s)
            for (int m = 0; m < protocol.n_models; ++m) {
                report_progress(protocol, "TSTR set " + std::to_string(s + 1) + " model " + std::to_string(m + 1));
                try {
                    const auto model = train_classifier(synth[static_cast<std::size_t>(s)], val, cfg,
                                                        rep.model_seeds[static_cast<std::size_t>(m)]);
                    rep.tstr_train.push_back({s, m, evaluate_classifier(model.model, holdout)});
                } catch (const Error& e) {
                    rep.failures.push_back("tstr set " + std::to_string(s) + " model " + std::to_string(m) + ": " +
                                           e.what());
                }
            }
        rep.delta_tstr = paired_gap(rep.trtr_train, rep.tstr_train);
    }
    if (evaluation_arm) {
        for (int m = 0; m < protocol.n_models; ++m) {
            report_progress(protocol, "holdout-trained model " + std::to_string(m + 1) + "/" +
                                          std::to_string(protocol.n_models));
            auto model = train_classifier(holdout, val, cfg, rep.model_seeds[static_cast<std::size_t>(m)]);
            rep.trtr_evaluate.push_back(evaluate_classifier(model.model, train));
            result.real_models.push_back(std::move(model.model));
        }
        for (int s = 0; s < protocol.n_synth; ++s)
            for (int m = 0; m < protocol.n_models; ++m) {
                try {
                    rep.trts_evaluate.push_back({s, m,
                                                 evaluate_classifier(result.real_models[static_cast<std::size_t>(m)],
                                                                     synth[static_cast<std::size_t>(s)])});
                } catch (const Error& e) {
                    rep.failures.push_back("trts set " + std::to_string(s) + " model " + std::to_string(m) + ": " +
                                           e.what());
                }
            }
        rep.delta_trts = paired_gap(rep.trtr_evaluate, rep.trts_evaluate);
    }
    return result;
}

}  // namespace

UtilityResult utility_eval(const SyntheticSource& source, const CohortSplits& raw_splits, const EvalProtocol& protocol,
                           std::uint64_t seed) {
    return run_utility(source, raw_splits, protocol, seed, true, true);
}

UtilityResult training_utility(const SyntheticSource& source, const CohortSplits& raw_splits,
                               const EvalProtocol& protocol, std::uint64_t seed) {
    return run_utility(source, raw_splits, protocol, seed, true, false);
}

UtilityResult evaluation_utility(const SyntheticSource& source, const CohortSplits& raw_splits,
                                 const EvalProtocol& protocol, std::uint64_t seed) {
    return run_utility(source, raw_splits, protocol, seed, false, true);
}

// ---------------------------------------------------------------------------
// Subgroups

void tally_subgroups(SubgroupReport& rep) {
    rep.by_mean = {};
    rep.by_paired = {};
    double naive = 0.0, synth = 0.0;
    int active = 0;
    for (const auto& g : rep.groups) {
        if (g.skipped) {
            ++rep.by_mean.skipped;
            ++rep.by_paired.skipped;
            continue;
        }
        ++active;
        naive += g.eps_naive.mean;
        synth += g.eps_synth.mean;
        if (g.eps_synth.mean < g.eps_naive.mean)
            ++rep.by_mean.wins;
        else if (g.eps_synth.mean > g.eps_naive.mean)
            ++rep.by_mean.losses;
        else
            ++rep.by_mean.ties;
        if (g.paired_diff.hi < 0.0)
            ++rep.by_paired.wins;
        else if (g.paired_diff.lo > 0.0)
            ++rep.by_paired.losses;
        else
            ++rep.by_paired.ties;
    }
    rep.mean_eps_naive = active ? naive / active : 0.0;
    rep.mean_eps_synth = active ? synth / active : 0.0;
    rep.win_fraction = active ? static_cast<double>(rep.by_mean.wins) / active : 0.0;
    rep.paired_win_fraction = active ? static_cast<double>(rep.by_paired.wins) / active : 0.0;
}

SubgroupReport subgroup_eval(std::span<const GruClassifier> models, const NormStats& norm, const Cohort& train_raw,
                             const SyntheticSource& source, const EvalProtocol& protocol, std::uint64_t seed) {
    check_protocol(protocol);
    check_raw(train_raw, "subgroup evaluation cohort");
    if (models.empty()) fail(ErrorKind::Input, "subgroup_eval: no trained models");

    SubgroupReport rep;
    rep.task = train_raw.meta.task;
    rep.source = source.name();
    rep.classifier_hash = classifier_config_hash(protocol.classifier);
    rep.seed = seed;
    rep.n_models = static_cast<int>(models.size());

    const RngStream root(seed);
    const auto partition = subgroup_partition(train_raw);
    auto mean_auc = [&](const Cohort& normed, std::vector<double>& per_model) {
        per_model.clear();
        for (const auto& m : models) per_model.push_back(evaluate_classifier(m, normed));
    };

    std::vector<double> a_large, a_small, a_synth;
    for (int g = 0; g < kSubgroups; ++g) {
        SubgroupEntry e;
        e.key = g;
        e.label = Demographics::from_index(g).label();
        const auto& idx = partition[static_cast<std::size_t>(g)];
        e.n_group = idx.size();
        if (idx.size() < 2) {
            e.skipped = true;
            e.skip_reason = "fewer than two records";
            rep.groups.push_back(std::move(e));
            continue;
        }
        report_progress(protocol, "subgroup " + e.label + " (" + std::to_string(idx.size()) + " records)");
        const Cohort group = select(train_raw, idx);
        std::vector<double> diffs;
        for (int k = 0; k < protocol.n_split_seeds; ++k) {
            const std::uint64_t split_seed =
                root.child("split", static_cast<std::uint64_t>(k)).child(static_cast<std::uint64_t>(g)).seed();
            const SubgroupSplit split = subgroup_80_20_split(group, split_seed);
            e.n_large = split.large.size();
            e.n_small = split.small.size();
            if (!two_classes(split.large) || !two_classes(split.small)) continue;
            RngStream srng =
                root.child("synthetic", static_cast<std::uint64_t>(g)).child(static_cast<std::uint64_t>(k));
            const Cohort synth = source.generate(split.large, srng);
            check_conditions(split.large, synth, source.name());
            e.n_synthetic = synth.size();
            mean_auc(normalize(split.large, norm), a_large);
            mean_auc(normalize(split.small, norm), a_small);
            mean_auc(normalize(synth, norm), a_synth);
            double naive = 0.0, synthetic = 0.0;
            for (std::size_t m = 0; m < models.size(); ++m) {
                naive += std::abs(a_large[m] - a_small[m]);
                synthetic += std::abs(a_large[m] - a_synth[m]);
            }
            naive /= static_cast<double>(models.size());
            synthetic /= static_cast<double>(models.size());
            e.split_seeds.push_back(split_seed);
            e.eps_naive_runs.push_back(naive);
            e.eps_synth_runs.push_back(synthetic);
            diffs.push_back(synthetic - naive);
        }
        if (e.split_seeds.empty()) {
            e.skipped = true;
            e.skip_reason = "single-class slice under every split seed";
            e.n_synthetic = 0;
        } else {
            e.n_synthetic = e.n_large;
            e.eps_naive = mean_ci95(e.eps_naive_runs);
            e.eps_synth = mean_ci95(e.eps_synth_runs);
            e.paired_diff = mean_ci95(diffs);
        }
        rep.groups.push_back(std::move(e));
    }
    tally_subgroups(rep);
    return rep;
}

// ---------------------------------------------------------------------------
// Fidelity

FidelityReport fidelity_eval(const Cohort& real, const Cohort& synthetic, const EvalProtocol& protocol,
                             std::uint64_t seed, bool mirror_labels) {
    check_protocol(protocol);
    if (real.empty() || synthetic.empty()) fail(ErrorKind::Input, "fidelity_eval: empty cohort");
    FidelityReport rep;
    rep.classifier_hash = classifier_config_hash(protocol.classifier);
    rep.seed = seed;
    rep.mirrored = mirror_labels;
    const RngStream root(seed);
    for (int i = 0; i < protocol.n_fidelity_runs; ++i) {
        const std::uint64_t s = root.child("fidelity", static_cast<std::uint64_t>(i)).seed();
        report_progress(protocol, "discriminator run " + std::to_string(i + 1) + "/" +
                                      std::to_string(protocol.n_fidelity_runs));
        rep.run_seeds.push_back(s);
        rep.disc_auc.push_back(train_discriminator(real, synthetic, protocol.classifier, s, mirror_labels).disc_auc);
    }
    rep.ci = mean_ci95(rep.disc_auc);
    return rep;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<AlignmentWeights> default_weight_grid() {
    return {
        {0.0, 0.0, 0.0, 0.0},  {0.1, 0.0, 0.0, 0.0}, {0.0, 0.1, 0.0, 0.0},
        {0.0, 0.0, 0.1, 0.0},  {0.0, 0.0, 0.0, 0.1}, {0.1, 0.0, 0.1, 0.0},
        {0.0, 0.1, 0.0, 0.1},  {0.1, 0.1, 0.1, 0.1}, {0.5, 0.5, 0.5, 0.5},
    };
}

GeneratorConfig with_weights(GeneratorConfig base, const AlignmentWeights& w) {
    base.vae.weights.mmd = w.ae_mmd;
    base.vae.weights.consistency = w.ae_consistency;
    base.diffusion.weights.mmd = w.diff_mmd;
    base.diffusion.weights.consistency = w.diff_consistency;
    std::ostringstream os;
    os.precision(17);
    os << base.config_hash << '|' << w.ae_mmd << '|' << w.ae_consistency << '|' << w.diff_mmd << '|'
       << w.diff_consistency;
    base.config_hash = fnv1a64(os.str());
    return base;
}

std::vector<int> rank_sweep(const std::vector<SweepEntry>& entries) {
    std::vector<int> ok, failed;
    for (const auto& e : entries) (e.report ? ok : failed).push_back(e.index);
    auto find = [&](int index) -> const SweepEntry& {
        for (const auto& e : entries)
            if (e.index == index) return e;
        fail(ErrorKind::Input, "rank_sweep: unknown index");
    };
    std::stable_sort(ok.begin(), ok.end(), [&](int a, int b) {
        const auto& ra = *find(a).report;
        const auto& rb = *find(b).report;
        if (ra.delta_trts.mean != rb.delta_trts.mean) return ra.delta_trts.mean < rb.delta_trts.mean;
        if (ra.delta_tstr.mean != rb.delta_tstr.mean) return ra.delta_tstr.mean < rb.delta_tstr.mean;
        return a < b;
    });
    ok.insert(ok.end(), failed.begin(), failed.end());
    return ok;
}

SweepReport weight_sweep(const CohortSplits& raw_splits, const GeneratorConfig& base,
                         std::span<const AlignmentWeights> grid, const EvalProtocol& protocol, std::uint64_t seed) {
    if (grid.empty()) fail(ErrorKind::Config, "weight_sweep: empty grid");
    SweepReport rep;
    rep.task = raw_splits.train.meta.task;
    rep.config_hash = base.config_hash;
    rep.classifier_hash = classifier_config_hash(protocol.classifier);
    rep.seed = seed;
    const RngStream root(seed);
    rep.generator_seed = root.child("generator").seed();
    const std::uint64_t utility_seed = root.child("utility").seed();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        SweepEntry e;
        e.index = static_cast<int>(i);
        e.weights = grid[i];
        report_progress(protocol, "sweep configuration " + std::to_string(i + 1) + "/" + std::to_string(grid.size()));
        try {
            const GeneratorConfig cfg = with_weights(base, grid[i]);
            auto trained = train_generator(raw_splits.train, cfg, rep.generator_seed);
            const BundleGenerator gen(std::move(trained.bundle));
            UtilityReport u = utility_eval(gen, raw_splits, protocol, utility_seed).report;
            u.config_hash = cfg.config_hash;
            e.report = std::move(u);
        } catch (const Error& err) {
            e.error = std::string(to_string(err.kind())) + ": " + err.what();
        }
        rep.entries.push_back(std::move(e));
    }
    rep.ranking = rank_sweep(rep.entries);
    return rep;
}

// ---------------------------------------------------------------------------
// JSON

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

Json to_json(const ConfidenceInterval& ci) {
    return Json{{"mean", ci.mean}, {"lo", ci.lo}, {"hi", ci.hi}, {"n_runs", ci.n_runs}};
}

namespace {

ConfidenceInterval ci_from_json(const Json& j) {
    return {j.at("mean").get<double>(), j.at("lo").get<double>(), j.at("hi").get<double>(), j.at("n_runs").get<int>()};
}

Json runs_to_json(const std::vector<SyntheticRun>& runs) {
    Json out = Json::array();
    for (const auto& r : runs) out.push_back(Json{{"synth_set", r.synth_set}, {"model", r.model}, {"auroc", r.auroc}});
    return out;
}

std::vector<SyntheticRun> runs_from_json(const Json& j) {
    std::vector<SyntheticRun> out;
    for (const auto& r : j) out.push_back({r.at("synth_set").get<int>(), r.at("model").get<int>(), r.at("auroc").get<double>()});
    return out;
}

Json weights_to_json(const AlignmentWeights& w) {
    return Json{{"ae_mmd", w.ae_mmd},
                {"ae_consistency", w.ae_consistency},
                {"diff_mmd", w.diff_mmd},
                {"diff_consistency", w.diff_consistency}};
}

Json tally_to_json(const SubgroupTally& t) {
    return Json{{"wins", t.wins}, {"losses", t.losses}, {"ties", t.ties}, {"skipped", t.skipped}};
}

}  // namespace

Json to_json(const UtilityReport& r) {
    Json j;
    j["data"] = r.data;
    j["task"] = r.task;
    j["source"] = r.source;
    j["config_hash"] = hash_hex(r.config_hash);
    j["classifier_hash"] = hash_hex(r.classifier_hash);
    j["seed"] = r.seed;
    j["protocol"] = {{"n_synth", r.synthetic_seeds.size()}, {"n_models", r.model_seeds.size()}};
    j["model_seeds"] = r.model_seeds;
    j["synthetic_seeds"] = r.synthetic_seeds;
    j["arms"] = {{"training", r.training_arm}, {"evaluation", r.evaluation_arm}};
    j["runs"] = {{"trtr_train", r.trtr_train},
                 {"tstr_train", runs_to_json(r.tstr_train)},
                 {"trtr_evaluate", r.trtr_evaluate},
                 {"trts_evaluate", runs_to_json(r.trts_evaluate)}};
    j["delta_tstr"] = r.training_arm ? to_json(r.delta_tstr) : Json(nullptr);
    j["delta_trts"] = r.evaluation_arm ? to_json(r.delta_trts) : Json(nullptr);
    j["failures"] = r.failures;
    return j;
}

Json to_json(const SubgroupReport& r) {
    Json groups = Json::array();
    for (const auto& g : r.groups) {
        Json e{{"key", g.key},
               {"label", g.label},
               {"n_group", g.n_group},
               {"n_large", g.n_large},
               {"n_small", g.n_small},
               {"n_synthetic", g.n_synthetic},
               {"skipped", g.skipped}};
        if (g.skipped) {
            e["skip_reason"] = g.skip_reason;
        } else {
            e["split_seeds"] = g.split_seeds;
            e["eps_naive_runs"] = g.eps_naive_runs;
            e["eps_synth_runs"] = g.eps_synth_runs;
            e["eps_naive"] = to_json(g.eps_naive);
            e["eps_synth"] = to_json(g.eps_synth);
            e["paired_diff"] = to_json(g.paired_diff);
        }
        groups.push_back(std::move(e));
    }
    return Json{{"data", r.data},
                {"task", r.task},
                {"source", r.source},
                {"config_hash", hash_hex(r.config_hash)},
                {"classifier_hash", hash_hex(r.classifier_hash)},
                {"seed", r.seed},
                {"n_models", r.n_models},
                {"groups", std::move(groups)},
                {"aggregates",
                 {{"mean_eps_naive", r.mean_eps_naive},
                  {"mean_eps_synth", r.mean_eps_synth},
                  {"by_mean", tally_to_json(r.by_mean)},
                  {"by_paired", tally_to_json(r.by_paired)},
                  {"win_fraction", r.win_fraction},
                  {"paired_win_fraction", r.paired_win_fraction}}}};
}

Json to_json(const FidelityReport& r) {
    return Json{{"data", r.data},
                {"source", r.source},
                {"config_hash", hash_hex(r.config_hash)},
                {"classifier_hash", hash_hex(r.classifier_hash)},
                {"seed", r.seed},
                {"mirrored", r.mirrored},
                {"run_seeds", r.run_seeds},
                {"disc_auc", r.disc_auc},
                {"ci", to_json(r.ci)}};
}

Json to_json(const SweepReport& r) {
    Json entries = Json::array();
    for (const auto& e : r.entries) {
        Json j{{"index", e.index}, {"weights", weights_to_json(e.weights)}};
        if (e.report)
            j["utility"] = to_json(*e.report);
        else
            j["error"] = e.error;
        entries.push_back(std::move(j));
    }
    return Json{{"data", r.data},
                {"task", r.task},
                {"config_hash", hash_hex(r.config_hash)},
                {"classifier_hash", hash_hex(r.classifier_hash)},
                {"seed", r.seed},
                {"generator_seed", r.generator_seed},
                {"entries", std::move(entries)},
                {"ranking", r.ranking}};
}

Json reference_values() {
    return Json{
        {"note", "external magnitudes measured on restricted clinical cohorts at full scale; annotations only, "
                 "never compared against toy results"},
        {"population_gaps",
         Json::array({Json{{"data", "eICU"}, {"task", "LOS24"}, {"model", "TimeAutoDiff"},
                           {"delta_tstr", "0.01 +/- 0.002"}, {"delta_trts", "0.026 +/- 0.002"}},
                      Json{{"data", "eICU"}, {"task", "Mortality24"}, {"model", "TimeAutoDiff"},
                           {"delta_tstr", "0.011 +/- 0.003"}, {"delta_trts", "0.039 +/- 0.005"}},
                      Json{{"data", "eICU"}, {"task", "Mortality24"}, {"model", "TimeDiff"},
                           {"delta_tstr", "0.003 +/- 0.002"}, {"delta_trts", "0.019 +/- 0.003"}}})},
        {"enhanced_delta_trts_range", {0.003, 0.014}},
        {"enhanced_subgroup_win_percent",
         {{"eICU Mortality24", 76}, {"eICU LOS24", 72}, {"MIMIC Mortality24", 84}, {"MIMIC LOS24", 76}}},
        {"eicu_los24_mean_subgroup_error", {{"test", 0.044}, {"enhanced", 0.028}}},
        {"disc_auc_ranges",
         {{"TimeDiff", {0.003, 0.057}},
          {"Enhanced TimeAutoDiff", {0.039, 0.083}},
          {"TimeAutoDiff", {0.081, 0.147}},
          {"HealthGen", {0.282, 0.427}}}}};
}

Json make_eval_report(const std::string& kind, const Json& body) {
    return Json{{"schema", "tadiff.eval_report"},
                {"format_version", kEvalReportVersion},
                {"kind", kind},
                {"config_hash", body.value("config_hash", std::string())},
                {"classifier_hash", body.value("classifier_hash", std::string())},
                {"seed", body.value("seed", std::uint64_t{0})},
                {"body", body},
                {"reference", reference_values()}};
}

// ---------------------------------------------------------------------------
// Self-consistency

namespace {

constexpr double kTol = 1e-12;

bool same(double a, double b) { return std::abs(a - b) <= kTol * std::max(1.0, std::abs(a)); }

void compare_ci(const ConfidenceInterval& want, const Json& got, const std::string& where,
                std::vector<std::string>& problems) {
    const ConfidenceInterval g = ci_from_json(got);
    if (!same(want.mean, g.mean) || !same(want.lo, g.lo) || !same(want.hi, g.hi) || want.n_runs != g.n_runs)
        problems.push_back(where + ": stored interval does not match the raw runs");
}

void verify_utility(const Json& b, const std::string& where, std::vector<std::string>& problems) {
    const auto& runs = b.at("runs");
    const auto n_synth = b.at("protocol").at("n_synth").get<std::size_t>();
    const auto n_models = b.at("protocol").at("n_models").get<std::size_t>();
    const auto n_fail = b.at("failures").size();
    if (b.at("arms").at("training").get<bool>()) {
        const auto ref = runs.at("trtr_train").get<std::vector<double>>();
        const auto tstr = runs_from_json(runs.at("tstr_train"));
        if (ref.size() != n_models) problems.push_back(where + ": TRTR run count differs from the protocol");
        if (n_fail == 0 && tstr.size() != n_synth * n_models)
            problems.push_back(where + ": TSTR run count differs from the protocol");
        compare_ci(paired_gap(ref, tstr), b.at("delta_tstr"), where + ".delta_tstr", problems);
    }
    if (b.at("arms").at("evaluation").get<bool>()) {
        const auto ref = runs.at("trtr_evaluate").get<std::vector<double>>();
        const auto trts = runs_from_json(runs.at("trts_evaluate"));
        if (ref.size() != n_models) problems.push_back(where + ": TRTR-evaluate run count differs from the protocol");
        if (n_fail == 0 && trts.size() != n_synth * n_models)
            problems.push_back(where + ": TRTS run count differs from the protocol");
        compare_ci(paired_gap(ref, trts), b.at("delta_trts"), where + ".delta_trts", problems);
    }
}

void verify_subgroups(const Json& b, std::vector<std::string>& problems) {
    const auto& groups = b.at("groups");
    if (groups.size() != static_cast<std::size_t>(kSubgroups))
        problems.push_back("subgroups: expected 32 entries, found " + std::to_string(groups.size()));
    SubgroupReport r;
    for (const auto& g : groups) {
        SubgroupEntry e;
        e.key = g.at("key").get<int>();
        e.skipped = g.at("skipped").get<bool>();
        if (!e.skipped) {
            const auto naive = g.at("eps_naive_runs").get<std::vector<double>>();
            const auto synth = g.at("eps_synth_runs").get<std::vector<double>>();
            std::vector<double> diffs;
            for (std::size_t k = 0; k < naive.size() && k < synth.size(); ++k) diffs.push_back(synth[k] - naive[k]);
            e.eps_naive = mean_ci95(naive);
            e.eps_synth = mean_ci95(synth);
            e.paired_diff = mean_ci95(diffs);
            const std::string where = "subgroup " + g.at("label").get<std::string>();
            compare_ci(e.eps_naive, g.at("eps_naive"), where + ".eps_naive", problems);
            compare_ci(e.eps_synth, g.at("eps_synth"), where + ".eps_synth", problems);
            compare_ci(e.paired_diff, g.at("paired_diff"), where + ".paired_diff", problems);
        }
        r.groups.push_back(e);
    }
    tally_subgroups(r);
    const auto& agg = b.at("aggregates");
    const auto check_tally = [&](const SubgroupTally& t, const Json& j, const std::string& name) {
        if (t.wins != j.at("wins").get<int>() || t.losses != j.at("losses").get<int>() ||
            t.ties != j.at("ties").get<int>() || t.skipped != j.at("skipped").get<int>())
            problems.push_back("subgroups: " + name + " tally does not match the entries");
        if (t.wins + t.losses + t.ties + t.skipped != kSubgroups)
            problems.push_back("subgroups: " + name + " tally does not account for 32 groups");
    };
    check_tally(r.by_mean, agg.at("by_mean"), "by_mean");
    check_tally(r.by_paired, agg.at("by_paired"), "by_paired");
    if (!same(r.mean_eps_naive, agg.at("mean_eps_naive").get<double>()) ||
        !same(r.mean_eps_synth, agg.at("mean_eps_synth").get<double>()) ||
        !same(r.win_fraction, agg.at("win_fraction").get<double>()) ||
        !same(r.paired_win_fraction, agg.at("paired_win_fraction").get<double>()))
        problems.push_back("subgroups: aggregate means or fractions do not match the entries");
}

}  // namespace

std::vector<std::string> verify_report(const Json& report) {
    std::vector<std::string> problems;
    try {
        if (report.value("schema", std::string()) != "tadiff.eval_report")
            return {"not an evaluation report"};
        if (report.value("format_version", -1) != kEvalReportVersion) return {"unsupported report format_version"};
        const auto kind = report.at("kind").get<std::string>();
        const auto& b = report.at("body");
        if (kind == "utility") {
            verify_utility(b, "utility", problems);
        } else if (kind == "subgroups") {
            verify_subgroups(b, problems);
        } else if (kind == "fidelity") {
            const auto runs = b.at("disc_auc").get<std::vector<double>>();
            if (runs.size() != b.at("run_seeds").size()) problems.push_back("fidelity: run/seed count mismatch");
            compare_ci(mean_ci95(runs), b.at("ci"), "fidelity.ci", problems);
        } else if (kind == "sweep") {
            std::vector<SweepEntry> entries;
            for (const auto& e : b.at("entries")) {
                SweepEntry se;
                se.index = e.at("index").get<int>();
                if (e.contains("utility")) {
                    const auto& u = e.at("utility");
                    verify_utility(u, "sweep entry " + std::to_string(se.index), problems);
                    UtilityReport ur;
                    ur.delta_tstr = ci_from_json(u.at("delta_tstr"));
                    ur.delta_trts = ci_from_json(u.at("delta_trts"));
                    se.report = ur;
                }
                entries.push_back(std::move(se));
            }
            if (rank_sweep(entries) != b.at("ranking").get<std::vector<int>>())
                problems.push_back("sweep: ranking does not follow the stored gaps");
        } else if (kind == "pipeline") {
            for (const auto& part : b.at("reports")) {
                auto sub = verify_report(part);
                problems.insert(problems.end(), sub.begin(), sub.end());
            }
        } else {
            problems.push_back("unknown report kind '" + kind + "'");
        }
    } catch (const Json::exception& e) {
        problems.push_back(std::string("malformed report: ") + e.what());
    } catch (const Error& e) {
        problems.push_back(std::string("malformed report: ") + e.what());
    }
    return problems;
}

// ---------------------------------------------------------------------------
// CSV and text

namespace {

std::string num(double v, int digits = 4) {
    if (v == 0.0) return "0";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string pm(const Json& ci) {
    const auto c = ci_from_json(ci);
    return num(c.mean, 3) + " +/- " + num((c.hi - c.lo) / 2.0, 3);
}

std::string relation(double tstr, double trts) {
    if (tstr <= 0.0) return trts == 0.0 ? "both zero" : "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "D_TRTS ~ %.1f x D_TSTR", trts / tstr);
    return buf;
}

void collect_utilities(const Json& report, std::vector<const Json*>& out) {
    const auto kind = report.at("kind").get<std::string>();
    if (kind == "utility") out.push_back(&report.at("body"));
    if (kind == "pipeline")
        for (const auto& r : report.at("body").at("reports")) collect_utilities(r, out);
}

void collect_subgroups(const Json& report, std::vector<const Json*>& out) {
    const auto kind = report.at("kind").get<std::string>();
    if (kind == "subgroups") out.push_back(&report.at("body"));
    if (kind == "pipeline")
        for (const auto& r : report.at("body").at("reports")) collect_subgroups(r, out);
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string utility_csv(std::span<const Json> reports) {
    std::ostringstream os;
    os << "data,task,model,delta_tstr,delta_tstr_lo,delta_tstr_hi,delta_tstr_runs,delta_trts,delta_trts_lo,"
          "delta_trts_hi,delta_trts_runs,relation,config_hash,classifier_hash,seed\n";
    for (const auto& rep : reports) {
        std::vector<const Json*> utils;
        collect_utilities(rep, utils);
        if (rep.at("kind") == "sweep")
            for (const auto& e : rep.at("body").at("entries"))
                if (e.contains("utility")) utils.push_back(&e.at("utility"));
        for (const Json* u : utils) {
            const Json& b = *u;
            const bool has_tstr = !b.at("delta_tstr").is_null();
            const bool has_trts = !b.at("delta_trts").is_null();
            const auto tstr = has_tstr ? ci_from_json(b.at("delta_tstr")) : ConfidenceInterval{};
            const auto trts = has_trts ? ci_from_json(b.at("delta_trts")) : ConfidenceInterval{};
            os << b.at("data").get<std::string>() << ',' << b.at("task").get<std::string>() << ','
               << b.at("source").get<std::string>() << ',';
            if (has_tstr)
                os << csv_num(tstr.mean) << ',' << csv_num(tstr.lo) << ',' << csv_num(tstr.hi) << ',' << tstr.n_runs;
            else
                os << ",,,";
            os << ',';
            if (has_trts)
                os << csv_num(trts.mean) << ',' << csv_num(trts.lo) << ',' << csv_num(trts.hi) << ',' << trts.n_runs;
            else
                os << ",,,";
            os << ',' << (has_tstr && has_trts ? relation(tstr.mean, trts.mean) : "") << ','
               << b.at("config_hash").get<std::string>() << ',' << b.at("classifier_hash").get<std::string>() << ','
               << b.at("seed").get<std::uint64_t>() << '\n';
        }
    }
    return os.str();
}

std::string subgroup_csv(std::span<const Json> reports) {
    std::ostringstream os;
    os << "data,task,model,subgroup,n_group,n_large,n_small,n_synthetic,skipped,eps_naive,eps_naive_lo,eps_naive_hi,"
          "eps_synth,eps_synth_lo,eps_synth_hi,synthetic_wins_by_mean,synthetic_wins_paired\n";
    for (const auto& rep : reports) {
        std::vector<const Json*> subs;
        collect_subgroups(rep, subs);
        for (const Json* s : subs) {
            const Json& b = *s;
            const std::string prefix = b.at("data").get<std::string>() + ',' + b.at("task").get<std::string>() + ',' +
                                       b.at("source").get<std::string>() + ',';
            for (const auto& g : b.at("groups")) {
                os << prefix << g.at("label").get<std::string>() << ',' << g.at("n_group").get<std::size_t>() << ','
                   << g.at("n_large").get<std::size_t>() << ',' << g.at("n_small").get<std::size_t>() << ','
                   << g.at("n_synthetic").get<std::size_t>() << ',' << (g.at("skipped").get<bool>() ? 1 : 0) << ',';
                if (g.at("skipped").get<bool>()) {
                    os << ",,,,,,,\n";
                    continue;
                }
                const auto n = ci_from_json(g.at("eps_naive"));
                const auto y = ci_from_json(g.at("eps_synth"));
                const auto d = ci_from_json(g.at("paired_diff"));
                os << csv_num(n.mean) << ',' << csv_num(n.lo) << ',' << csv_num(n.hi) << ',' << csv_num(y.mean) << ','
                   << csv_num(y.lo) << ',' << csv_num(y.hi) << ',' << (y.mean < n.mean ? 1 : 0) << ','
                   << (d.hi < 0.0 ? 1 : 0) << '\n';
            }
            const auto& agg = b.at("aggregates");
            os << prefix << "ALL,,,,," << agg.at("by_mean").at("skipped").get<int>() << ','
               << csv_num(agg.at("mean_eps_naive").get<double>()) << ",,," << csv_num(agg.at("mean_eps_synth").get<double>())
               << ",,," << csv_num(agg.at("win_fraction").get<double>()) << ','
               << csv_num(agg.at("paired_win_fraction").get<double>()) << '\n';
        }
    }
    return os.str();
}

namespace {

void render_utility(const Json& b, std::ostringstream& os) {
    os << "Population utility (" << b.at("source").get<std::string>() << ")\n";
    os << "  " << pad("Data", 14) << pad("Task", 12) << pad("Model", 12) << pad("D_TSTR", 18) << pad("D_TRTS", 18)
       << "Relation\n";
    const bool has_tstr = !b.at("delta_tstr").is_null();
    const bool has_trts = !b.at("delta_trts").is_null();
    os << "  " << pad(b.at("data").get<std::string>(), 14) << pad(b.at("task").get<std::string>(), 12)
       << pad(b.at("source").get<std::string>(), 12) << pad(has_tstr ? pm(b.at("delta_tstr")) : "-", 18)
       << pad(has_trts ? pm(b.at("delta_trts")) : "-", 18)
       << (has_tstr && has_trts
               ? relation(b.at("delta_tstr").at("mean").get<double>(), b.at("delta_trts").at("mean").get<double>())
               : "")
       << "\n";
    for (const char* key : {"delta_tstr", "delta_trts"}) {
        if (b.at(key).is_null()) continue;
        const auto c = ci_from_json(b.at(key));
        os << (std::string(key) == "delta_tstr" ? "Δ_TSTR = " : "Δ_TRTS = ") << num(c.mean) << "  (95% CI ["
           << num(c.lo) << ", " << num(c.hi) << "], " << c.n_runs << " runs)\n";
    }
    if (!b.at("failures").empty()) os << b.at("failures").size() << " failed runs recorded\n";
}

void render_subgroups(const Json& b, std::ostringstream& os) {
    os << "Subgroup errors (" << b.at("source").get<std::string>() << ", " << b.at("n_models").get<int>()
       << " models)\n";
    os << "  " << pad("Subgroup", 18) << pad("n", 6) << pad("large", 7) << pad("small", 7) << pad("synth", 7)
       << pad("eps_naive", 18) << pad("eps_synth", 18) << "result\n";
    for (const auto& g : b.at("groups")) {
        os << "  " << pad(g.at("label").get<std::string>(), 18) << pad(std::to_string(g.at("n_group").get<int>()), 6)
           << pad(std::to_string(g.at("n_large").get<int>()), 7) << pad(std::to_string(g.at("n_small").get<int>()), 7)
           << pad(std::to_string(g.at("n_synthetic").get<int>()), 7);
        if (g.at("skipped").get<bool>()) {
            os << "skipped: " << g.at("skip_reason").get<std::string>() << "\n";
            continue;
        }
        const double n = g.at("eps_naive").at("mean").get<double>();
        const double s = g.at("eps_synth").at("mean").get<double>();
        os << pad(pm(g.at("eps_naive")), 18) << pad(pm(g.at("eps_synth")), 18)
           << (s < n ? "synthetic" : s > n ? "test" : "tie") << "\n";
    }
    const auto& a = b.at("aggregates");
    os << "  " << pad("Data", 14) << pad("Task", 12) << pad("Model", 12) << pad("Test err", 10) << pad("Synth err", 11)
       << "% Synthetic < Test (mean / paired)\n";
    char pct[64];
    std::snprintf(pct, sizeof pct, "%.0f%% / %.0f%%", 100.0 * a.at("win_fraction").get<double>(),
                  100.0 * a.at("paired_win_fraction").get<double>());
    os << "  " << pad(b.at("data").get<std::string>(), 14) << pad(b.at("task").get<std::string>(), 12)
       << pad(b.at("source").get<std::string>(), 12) << pad(num(a.at("mean_eps_naive").get<double>(), 3), 10)
       << pad(num(a.at("mean_eps_synth").get<double>(), 3), 11) << pct << "\n";
    os << "  wins " << a.at("by_mean").at("wins").get<int>() << ", losses " << a.at("by_mean").at("losses").get<int>()
       << ", ties " << a.at("by_mean").at("ties").get<int>() << ", skipped " << a.at("by_mean").at("skipped").get<int>()
       << "\n";
}

}  // namespace

std::string render_report(const Json& report) {
    std::ostringstream os;
    const auto kind = report.at("kind").get<std::string>();
    const auto& b = report.at("body");
    os << "report: " << kind << "  config " << report.at("config_hash").get<std::string>() << "  classifier "
       << report.at("classifier_hash").get<std::string>() << "  seed " << report.at("seed").get<std::uint64_t>()
       << "\n";
    if (kind == "utility") {
        render_utility(b, os);
    } else if (kind == "subgroups") {
        render_subgroups(b, os);
    } else if (kind == "fidelity") {
        const auto c = ci_from_json(b.at("ci"));
        os << "DiscAUC (" << b.at("source").get<std::string>() << ") = " << num(c.mean) << "  (95% CI [" << num(c.lo)
           << ", " << num(c.hi) << "], " << c.n_runs << " runs)\n";
    } else if (kind == "sweep") {
        os << "Alignment-weight sweep, ranked by D_TRTS then D_TSTR\n";
        os << "  " << pad("rank", 6) << pad("ae_mmd", 8) << pad("ae_cons", 8) << pad("diff_mmd", 9) << pad("diff_cons", 10)
           << pad("D_TSTR", 18) << "D_TRTS\n";
        int rank = 1;
        for (int idx : b.at("ranking").get<std::vector<int>>()) {
            for (const auto& e : b.at("entries")) {
                if (e.at("index").get<int>() != idx) continue;
                const auto& w = e.at("weights");
                os << "  " << pad(std::to_string(rank++), 6) << pad(num(w.at("ae_mmd").get<double>(), 1), 8)
                   << pad(num(w.at("ae_consistency").get<double>(), 1), 8) << pad(num(w.at("diff_mmd").get<double>(), 1), 9)
                   << pad(num(w.at("diff_consistency").get<double>(), 1), 10);
                if (e.contains("utility"))
                    os << pad(pm(e.at("utility").at("delta_tstr")), 18) << pm(e.at("utility").at("delta_trts")) << "\n";
                else
                    os << "failed: " << e.at("error").get<std::string>() << "\n";
            }
        }
    } else if (kind == "pipeline") {
        for (const auto& part : b.at("reports")) os << render_report(part);
    } else {
        fail(ErrorKind::Schema, "render_report: unknown report kind '" + kind + "'");
    }
    return os.str();
}

}  // namespace tadiff
