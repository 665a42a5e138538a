// tadiff command-line tool. Every command works inside one workspace
// directory (--out) and appends a line to <out>/manifest.ndjson.

#include "tadiff/checkpoint.hpp"
#include "tadiff/config.hpp"
#include "tadiff/error.hpp"
#include "tadiff/evaluation.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace tadiff;

namespace {

struct Common {
    std::string out;
    std::string config;
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;
    bool quiet = false;
};

struct Context {
    Common args;
    std::string command;
    RunConfig config = RunConfig::defaults();
    fs::path root;
    std::map<std::string, std::string> inputs;
    std::vector<std::string> outputs;

    void log(const std::string& msg) const {
        if (!args.quiet) std::cerr << "[" << command << "] " << msg << "\n";
    }
    std::string rel(const fs::path& p) const { return fs::relative(p, root).generic_string(); }
};

std::string file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return hash_hex(fnv1a64(ss.str()));
}

void note_input(Context& ctx, const fs::path& p) {
    if (fs::is_directory(p)) {
        for (const char* f : {"meta.json", "records.ndjson"})
            if (fs::exists(p / f)) ctx.inputs[ctx.rel(p / f)] = file_hash(p / f);
    } else if (fs::exists(p)) {
        ctx.inputs[ctx.rel(p)] = file_hash(p);
    }
}

Json provenance(const Context& ctx) {
    return Json{{"command", ctx.command}, {"config_hash", hash_hex(ctx.config.hash())}, {"seed", ctx.args.seed}};
}

Cohort require_cohort(Context& ctx, const fs::path& dir, const std::string& what, const std::string& producer) {
    if (!fs::exists(dir / "meta.json"))
        fail(ErrorKind::Prerequisite, "missing " + what + " at " + dir.string() + " (run `tadiff " + producer + "` first)");
    note_input(ctx, dir);
    return load_cohort(dir);
}

void write_cohort(Context& ctx, const Cohort& c, const fs::path& dir) {
    save_cohort(c, dir);
    write_json(dir / "provenance.json", provenance(ctx));
    ctx.outputs.push_back(ctx.rel(dir));
}

void write_artifact(Context& ctx, const fs::path& p, const Json& j) {
    write_json(p, j);
    ctx.outputs.push_back(ctx.rel(p));
}

fs::path cohort_dir(const Context& ctx) {
    const auto ds = ctx.config.values().at("paths").at("dataset").get<std::string>();
    return ds.empty() ? ctx.root / "cohort" : fs::path(ds);
}

CohortSplits require_splits(Context& ctx) {
    CohortSplits s;
    s.train = require_cohort(ctx, ctx.root / "splits" / "train", "training split", "split");
    s.holdout = require_cohort(ctx, ctx.root / "splits" / "holdout", "holdout split", "split");
    s.holdout_val = require_cohort(ctx, ctx.root / "splits" / "holdout_val", "holdout validation split", "split");
    return s;
}

GeneratorBundle require_bundle(Context& ctx) {
    const fs::path p = ctx.root / "bundle.json";
    if (!fs::exists(p)) fail(ErrorKind::Prerequisite, "missing generator bundle " + p.string() + " (run `tadiff train-diff` first)");
    note_input(ctx, p);
    return bundle_from_json(read_json(p, "generator bundle"));
}

EvalProtocol protocol_for(const Context& ctx) {
    EvalProtocol p = ctx.config.protocol();
    if (!ctx.args.quiet) p.progress = [&ctx](const std::string& m) { ctx.log(m); };
    return p;
}

std::unique_ptr<SyntheticSource> make_source(Context& ctx, const std::string& kind) {
    if (kind == "bundle") return std::make_unique<BundleGenerator>(require_bundle(ctx));
    if (kind == "identity") return std::make_unique<IdentityGenerator>();
    if (kind == "oracle") return std::make_unique<ToyOracleGenerator>(ctx.config.toy_preset());
    fail(ErrorKind::Config, "unknown --source '" + kind + "' (expected bundle, identity or oracle)");
}

Json report_envelope(const Context& ctx, const std::string& kind, Json body) {
    body["config_hash"] = hash_hex(ctx.config.hash());
    body["seed"] = ctx.args.seed;
    if (body.contains("data")) body["data"] = ctx.config.data_label();
    return make_eval_report(kind, body);
}

// ---------------------------------------------------------------------------

void cmd_gen_toy(Context& ctx) {
    const ToyPreset preset = ctx.config.toy_preset();
    if (preset.n <= 0) fail(ErrorKind::Config, "toy.n must be positive");
    ctx.log("sampling " + std::to_string(preset.n) + " records from preset " + preset.name);
    write_cohort(ctx, synth_toy_cohort(preset, ctx.args.seed), ctx.root / "cohort");
}

void cmd_split(Context& ctx) {
    const Cohort c = require_cohort(ctx, cohort_dir(ctx), "cohort", "gen-toy");
    const auto s = stratified_split(c, ctx.config.split(ctx.args.seed));
    ctx.log("train " + std::to_string(s.train.size()) + ", holdout " + std::to_string(s.holdout.size()) +
            ", holdout_val " + std::to_string(s.holdout_val.size()));
    write_cohort(ctx, s.train, ctx.root / "splits" / "train");
    write_cohort(ctx, s.holdout, ctx.root / "splits" / "holdout");
    write_cohort(ctx, s.holdout_val, ctx.root / "splits" / "holdout_val");
}

Json loss_terms_json(const VaeLossTerms& t) {
    return Json{{"total", t.total}, {"recon", t.recon}, {"kld", t.kld}, {"mmd", t.mmd}, {"consistency", t.consistency}};
}

void cmd_train_vae(Context& ctx) {
    const Cohort train = require_cohort(ctx, ctx.root / "splits" / "train", "training split", "split");
    const GeneratorConfig cfg = ctx.config.generator();
    ctx.log("training VAE for " + std::to_string(cfg.vae.epochs) + " epochs");
    const auto result = train_vae(normalize(train), cfg.vae, RngStream(ctx.args.seed).child("vae").seed());
    Json j = vae_to_json(result.params, cfg.config_hash);
    j["seed"] = ctx.args.seed;
    Json log = Json::array();
    for (const auto& e : result.log) log.push_back(Json{{"epoch", e.epoch}, {"loss", loss_terms_json(e.mean)}});
    j["log"] = log;
    write_artifact(ctx, ctx.root / "vae.json", j);
}

void cmd_train_diff(Context& ctx) {
    const fs::path vae_path = ctx.root / "vae.json";
    if (!fs::exists(vae_path))
        fail(ErrorKind::Prerequisite, "missing VAE checkpoint " + vae_path.string() + " (run `tadiff train-vae` first)");
    const Cohort train = require_cohort(ctx, ctx.root / "splits" / "train", "training split", "split");
    note_input(ctx, vae_path);
    VaeParams vae = vae_from_json(read_json(vae_path, "VAE checkpoint"));
    const GeneratorConfig cfg = ctx.config.generator();
    if (vae.dims.latent != cfg.vae.dims.latent) fail(ErrorKind::Config, "vae.json latent size differs from the config");
    ctx.log("training denoiser for " + std::to_string(cfg.diffusion.epochs) + " epochs");
    const auto result = train_generator_phase2(train, std::move(vae), cfg, ctx.args.seed);
    Json j = bundle_to_json(result.bundle);
    j["seed"] = ctx.args.seed;
    Json log = Json::array();
    for (const auto& e : result.diffusion_log)
        log.push_back(Json{{"epoch", e.epoch},
                           {"loss", {{"total", e.mean.total}, {"base", e.mean.base}, {"mmd", e.mean.mmd},
                                     {"consistency", e.mean.consistency}}}});
    j["diffusion_log"] = log;
    write_artifact(ctx, ctx.root / "bundle.json", j);
}

void cmd_generate(Context& ctx) {
    const GeneratorBundle bundle = require_bundle(ctx);
    const Cohort train = require_cohort(ctx, ctx.root / "splits" / "train", "training split", "split");
    ctx.log("sampling " + std::to_string(train.size()) + " records with the training conditions");
    const BundleGenerator gen(bundle);
    RngStream rng(ctx.args.seed);
    write_cohort(ctx, gen.generate(train, rng), ctx.root / "synthetic");
}

void cmd_eval_utility(Context& ctx, const std::string& source_kind) {
    const auto source = make_source(ctx, source_kind);
    const CohortSplits splits = require_splits(ctx);
    const EvalProtocol proto = protocol_for(ctx);
    auto result = utility_eval(*source, splits, proto, ctx.args.seed);
    result.report.data = ctx.config.data_label();
    for (std::size_t m = 0; m < result.real_models.size(); ++m) {
        Json j = classifier_to_json(result.real_models[m], proto.classifier);
        j["seed"] = result.report.model_seeds[m];
        write_artifact(ctx, ctx.root / "models" / ("real_" + std::to_string(m) + ".json"), j);
    }
    const Json rep = report_envelope(ctx, "utility", to_json(result.report));
    write_artifact(ctx, ctx.root / "reports" / "utility.json", rep);
    std::cout << render_report(rep);
}

void cmd_eval_subgroups(Context& ctx, const std::string& source_kind) {
    const auto source = make_source(ctx, source_kind);
    const Cohort train = require_cohort(ctx, ctx.root / "splits" / "train", "training split", "split");
    const EvalProtocol proto = protocol_for(ctx);
    std::vector<GruClassifier> models;
    for (int m = 0; m < proto.n_models; ++m) {
        const fs::path p = ctx.root / "models" / ("real_" + std::to_string(m) + ".json");
        if (!fs::exists(p))
            fail(ErrorKind::Prerequisite, "missing real-trained model " + p.string() + " (run `tadiff eval-utility` first)");
        note_input(ctx, p);
        const Json j = read_json(p, "classifier checkpoint");
        if (j.at("classifier_hash").get<std::uint64_t>() != classifier_config_hash(proto.classifier))
            fail(ErrorKind::Config, p.string() + " was trained with a different downstream-classifier configuration");
        models.push_back(classifier_from_json(j));
    }
    const auto norm = compute_norm_stats(train);
    SubgroupReport rep = subgroup_eval(models, norm, train, *source, proto, ctx.args.seed);
    rep.data = ctx.config.data_label();
    const Json out = report_envelope(ctx, "subgroups", to_json(rep));
    write_artifact(ctx, ctx.root / "reports" / "subgroups.json", out);
    std::cout << render_report(out);
}

void cmd_eval_fidelity(Context& ctx, const std::string& real_dir, const std::string& synth_dir, bool mirror) {
    const fs::path rd = real_dir.empty() ? ctx.root / "splits" / "train" : fs::path(real_dir);
    const fs::path sd = synth_dir.empty() ? ctx.root / "synthetic" : fs::path(synth_dir);
    const Cohort real = require_cohort(ctx, rd, "real cohort", "split");
    const Cohort synth = require_cohort(ctx, sd, "synthetic cohort", "generate");
    FidelityReport rep = fidelity_eval(real, synth, protocol_for(ctx), ctx.args.seed, mirror);
    rep.data = ctx.config.data_label();
    rep.source = sd.filename().string();
    const Json out = report_envelope(ctx, "fidelity", to_json(rep));
    write_artifact(ctx, ctx.root / "reports" / "fidelity.json", out);
    std::cout << render_report(out);
}

void cmd_sweep(Context& ctx) {
    const CohortSplits splits = require_splits(ctx);
    const auto grid = ctx.config.grid();
    SweepReport rep = weight_sweep(splits, ctx.config.generator(), grid, protocol_for(ctx), ctx.args.seed);
    rep.data = ctx.config.data_label();
    const Json out = report_envelope(ctx, "sweep", to_json(rep));
    write_artifact(ctx, ctx.root / "reports" / "sweep.json", out);
    std::cout << render_report(out);
}

void cmd_report(Context& ctx, std::vector<std::string> inputs) {
    if (inputs.empty()) {
        const fs::path dir = ctx.root / "reports";
        if (!fs::exists(dir)) fail(ErrorKind::Prerequisite, "no reports in " + dir.string() + " (run an eval command first)");
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".json") inputs.push_back(e.path().string());
        std::sort(inputs.begin(), inputs.end());
        if (inputs.empty()) fail(ErrorKind::Prerequisite, "no reports in " + dir.string() + " (run an eval command first)");
    }
    std::vector<Json> reports;
    std::string classifier_hash;
    for (const auto& path : inputs) {
        note_input(ctx, path);
        Json r = read_json(path, "evaluation report");
        const auto problems = verify_report(r);
        if (!problems.empty()) fail(ErrorKind::Schema, path + ": " + problems.front());
        const auto h = r.at("classifier_hash").get<std::string>();
        if (classifier_hash.empty())
            classifier_hash = h;
        else if (h != classifier_hash)
            fail(ErrorKind::Config, "refusing to aggregate: " + path + " used downstream-classifier config " + h +
                                        ", others used " + classifier_hash);
        reports.push_back(std::move(r));
    }
    for (const auto& r : reports) std::cout << render_report(r) << "\n";
    const fs::path dir = ctx.root / "reports";
    fs::create_directories(dir);
    for (const auto& [name, text] : {std::pair{"summary_utility.csv", utility_csv(reports)},
                                     std::pair{"summary_subgroups.csv", subgroup_csv(reports)}}) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) fail(ErrorKind::Io, "cannot write " + (dir / name).string());
        out << text;
        ctx.outputs.push_back(ctx.rel(dir / name));
    }
}

void append_manifest(const Context& ctx, double seconds) {
    Json line{{"command", ctx.command},
              {"config_hash", hash_hex(ctx.config.hash())},
              {"seed", ctx.args.seed},
              {"overrides", ctx.args.overrides},
              {"inputs", ctx.inputs},
              {"outputs", ctx.outputs},
              {"wall_time_s", seconds}};
    std::ofstream out(ctx.root / "manifest.ndjson", std::ios::app);
    if (!out) fail(ErrorKind::Io, "cannot append to manifest");
    out << line.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tadiff: latent diffusion generator for ICU time series and synthetic-data evaluation"};
    app.require_subcommand(1);
    Common common;
    std::string source = "bundle";
    std::string real_dir, synth_dir;
    bool mirror = false;
    std::vector<std::string> report_inputs;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", common.out, "Workspace directory")->required();
        sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "Seed for this command")->capture_default_str();
        sub->add_option("--set", common.overrides, "Override a config key: dotted.key=value (repeatable)");
        sub->add_flag("-q,--quiet", common.quiet, "No progress output");
        return sub;
    };
    std::map<std::string, CLI::App*> subs;
    subs["gen-toy"] = add_common(app.add_subcommand("gen-toy", "Sample the toy cohort into <out>/cohort"));
    subs["split"] = add_common(app.add_subcommand("split", "Stratified 45/45/10 split into <out>/splits"));
    subs["train-vae"] = add_common(app.add_subcommand("train-vae", "Phase 1: train the VAE into <out>/vae.json"));
    subs["train-diff"] = add_common(app.add_subcommand("train-diff", "Phase 2: train the denoiser into <out>/bundle.json"));
    subs["generate"] = add_common(app.add_subcommand("generate", "Sample <out>/synthetic with the training conditions"));
    subs["eval-utility"] = add_common(app.add_subcommand("eval-utility", "TSTR and TRTS utility gaps"));
    subs["eval-fidelity"] = add_common(app.add_subcommand("eval-fidelity", "Discriminative fidelity (DiscAUC)"));
    subs["eval-subgroups"] = add_common(app.add_subcommand("eval-subgroups", "Subgroup estimation errors over 32 groups"));
    subs["sweep-weights"] = add_common(app.add_subcommand("sweep-weights", "Alignment-weight grid sweep"));
    subs["report"] = add_common(app.add_subcommand("report", "Verify and render reports; write summary CSVs"));
    for (const char* name : {"eval-utility", "eval-subgroups"})
        subs[name]->add_option("--source", source, "bundle | identity | oracle")->capture_default_str();
    subs["eval-fidelity"]->add_option("--real", real_dir, "Real cohort directory (default <out>/splits/train)");
    subs["eval-fidelity"]->add_option("--synthetic", synth_dir, "Synthetic cohort directory (default <out>/synthetic)");
    subs["eval-fidelity"]->add_flag("--mirror", mirror, "Label the real side 1 and the synthetic side 0");
    subs["report"]->add_option("inputs", report_inputs, "Report files (default <out>/reports/*.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    Context ctx;
    ctx.args = common;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) ctx.command = name;
    const auto start = std::chrono::steady_clock::now();
    try {
        if (!common.config.empty()) ctx.config = RunConfig::load(common.config);
        for (const auto& o : common.overrides) ctx.config.apply_override(o);
        (void)ctx.config.task();
        fs::create_directories(common.out);
        ctx.root = fs::absolute(common.out);

        const std::string& c = ctx.command;
        if (c == "gen-toy") cmd_gen_toy(ctx);
        else if (c == "split") cmd_split(ctx);
        else if (c == "train-vae") cmd_train_vae(ctx);
        else if (c == "train-diff") cmd_train_diff(ctx);
        else if (c == "generate") cmd_generate(ctx);
        else if (c == "eval-utility") cmd_eval_utility(ctx, source);
        else if (c == "eval-subgroups") cmd_eval_subgroups(ctx, source);
        else if (c == "eval-fidelity") cmd_eval_fidelity(ctx, real_dir, synth_dir, mirror);
        else if (c == "sweep-weights") cmd_sweep(ctx);
        else if (c == "report") cmd_report(ctx, report_inputs);

        append_manifest(ctx, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    } catch (const Error& e) {
        std::cerr << "tadiff: error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "tadiff: error[internal]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
