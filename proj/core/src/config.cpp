#include "tadiff/config.hpp"

#include "tadiff/error.hpp"

#include <fstream>

namespace tadiff {

namespace {

Json default_values() {
    Json grid = Json::array();
    for (const auto& w : default_weight_grid())
        grid.push_back({w.ae_mmd, w.ae_consistency, w.diff_mmd, w.diff_consistency});
    const VaeTrainConfig vae;
    const DiffusionTrainConfig diff;
    const ClassifierConfig clf;
    const EvalProtocol proto;
    const SplitSpec split;
    return Json{
        {"data", "icu-toy-v1"},
        {"task", "mortality"},
        {"paths", {{"dataset", ""}}},
        {"toy", {{"preset", "icu-toy-v1"}, {"n", 4000}}},
        {"split", {{"train", split.train}, {"holdout", split.holdout}, {"holdout_val", split.holdout_val}}},
        {"vae",
         {{"latent", vae.dims.latent},
          {"hidden", vae.dims.hidden},
          {"beta", vae.weights.beta},
          {"lambda_mmd", vae.weights.mmd},
          {"lambda_consistency", vae.weights.consistency},
          {"consistency_sigma", vae.weights.consistency_sigma},
          {"mmd_bandwidth", vae.weights.mmd_bandwidth},
          {"lr", vae.lr},
          {"epochs", vae.epochs},
          {"batch", vae.batch}}},
        {"diffusion",
         {{"hidden", diff.dims.hidden},
          {"time_embed", diff.dims.time_embed},
          {"cond_embed", diff.dims.cond_embed},
          {"steps", diff.schedule_steps},
          {"beta_min", diff.beta_min},
          {"beta_max", diff.beta_max},
          {"p_uncond", diff.p_uncond},
          {"guidance", 0.0},
          {"lambda_mmd", diff.weights.mmd},
          {"lambda_consistency", diff.weights.consistency},
          {"consistency_sigma", diff.weights.consistency_sigma},
          {"mmd_bandwidth", diff.weights.mmd_bandwidth},
          {"lr", diff.lr},
          {"epochs", diff.epochs},
          {"batch", diff.batch}}},
        {"classifier",
         {{"hidden", clf.hidden},
          {"lr", clf.lr},
          {"batch", clf.batch},
          {"max_epochs", clf.max_epochs},
          {"patience", clf.patience}}},
        {"protocol",
         {{"n_synth", proto.n_synth},
          {"n_models", proto.n_models},
          {"n_split_seeds", proto.n_split_seeds},
          {"n_fidelity_runs", proto.n_fidelity_runs}}},
        {"sweep", {{"grid", grid}}},
    };
}

bool compatible(const Json& want, const Json& got) {
    if (want.is_number_integer()) return got.is_number_integer();
    if (want.is_number()) return got.is_number();
    return want.type() == got.type();
}

void merge_into(Json& target, const Json& patch, const std::string& path, const std::string& origin) {
    if (!patch.is_object()) fail(ErrorKind::Config, origin + ": " + (path.empty() ? "top level" : path) + " must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!target.contains(it.key())) fail(ErrorKind::Config, origin + ": unknown key '" + key + "'");
        Json& slot = target[it.key()];
        if (slot.is_object()) {
            merge_into(slot, it.value(), key, origin);
        } else {
            if (!compatible(slot, it.value()))
                fail(ErrorKind::Config, origin + ": key '" + key + "' expects " + std::string(slot.type_name()) +
                                            ", got " + it.value().type_name());
            slot = slot.is_number_float() ? Json(it.value().get<double>()) : it.value();
        }
    }
}

template <typename T>
T get(const Json& j, const char* section, const char* key) {
    return j.at(section).at(key).get<T>();
}

void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::Config, "config: " + what);
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.values_ = default_values();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
    RunConfig c = defaults();
    std::ifstream in(file);
    if (!in) fail(ErrorKind::Config, "cannot read config file " + file.string());
    Json patch;
    try {
        patch = Json::parse(in);
    } catch (const Json::exception& e) {
        fail(ErrorKind::Config, file.string() + ": " + e.what());
    }
    c.merge(patch, file.string());
    return c;
}

void RunConfig::merge(const Json& patch, const std::string& origin) { merge_into(values_, patch, "", origin); }

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::Config, "override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const Json::exception&) {
        value = text;
    }
    // Build {"a": {"b": value}} from "a.b".
    Json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto dot = rest.find('.', start);
        parts.push_back(rest.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) fail(ErrorKind::Config, "override '" + assignment + "' has an empty key segment");
        patch = Json{{*it, patch}};
    }
    merge(patch, "override '" + assignment + "'");
}

std::string RunConfig::canonical() const {
    Json j = values_;
    j.erase("paths");
    return j.dump();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(canonical()); }

std::string RunConfig::task() const {
    const auto t = values_.at("task").get<std::string>();
    require(t == "mortality" || t == "los_binary", "task must be 'mortality' or 'los_binary'");
    return t;
}

std::string RunConfig::data_label() const { return values_.at("data").get<std::string>(); }

ToyPreset RunConfig::toy_preset() const {
    const auto name = get<std::string>(values_, "toy", "preset");
    ToyPreset p = name == "icu-toy-v1" ? default_toy_preset() : load_toy_preset(name);
    p.n = get<int>(values_, "toy", "n");
    p.task = task();
    validate(p);
    return p;
}

SplitSpec RunConfig::split(std::uint64_t seed) const {
    SplitSpec s;
    s.train = get<double>(values_, "split", "train");
    s.holdout = get<double>(values_, "split", "holdout");
    s.holdout_val = get<double>(values_, "split", "holdout_val");
    s.seed = seed;
    require(s.train > 0 && s.holdout > 0 && s.holdout_val > 0, "split fractions must be positive");
    require(std::abs(s.train + s.holdout + s.holdout_val - 1.0) < 1e-9, "split fractions must sum to 1");
    return s;
}

GeneratorConfig RunConfig::generator() const {
    GeneratorConfig g;
    const auto& v = values_.at("vae");
    g.vae.dims.latent = v.at("latent").get<int>();
    g.vae.dims.hidden = v.at("hidden").get<int>();
    g.vae.weights.beta = v.at("beta").get<double>();
    g.vae.weights.mmd = v.at("lambda_mmd").get<double>();
    g.vae.weights.consistency = v.at("lambda_consistency").get<double>();
    g.vae.weights.consistency_sigma = v.at("consistency_sigma").get<double>();
    g.vae.weights.mmd_bandwidth = v.at("mmd_bandwidth").get<double>();
    g.vae.lr = v.at("lr").get<double>();
    g.vae.epochs = v.at("epochs").get<int>();
    g.vae.batch = v.at("batch").get<int>();
    const auto& d = values_.at("diffusion");
    g.diffusion.dims.latent = g.vae.dims.latent;
    g.diffusion.dims.hidden = d.at("hidden").get<int>();
    g.diffusion.dims.time_embed = d.at("time_embed").get<int>();
    g.diffusion.dims.cond_embed = d.at("cond_embed").get<int>();
    g.diffusion.schedule_steps = d.at("steps").get<int>();
    g.diffusion.beta_min = d.at("beta_min").get<double>();
    g.diffusion.beta_max = d.at("beta_max").get<double>();
    g.diffusion.p_uncond = d.at("p_uncond").get<double>();
    g.guidance = d.at("guidance").get<double>();
    g.diffusion.weights.mmd = d.at("lambda_mmd").get<double>();
    g.diffusion.weights.consistency = d.at("lambda_consistency").get<double>();
    g.diffusion.weights.consistency_sigma = d.at("consistency_sigma").get<double>();
    g.diffusion.weights.mmd_bandwidth = d.at("mmd_bandwidth").get<double>();
    g.diffusion.lr = d.at("lr").get<double>();
    g.diffusion.epochs = d.at("epochs").get<int>();
    g.diffusion.batch = d.at("batch").get<int>();
    g.config_hash = hash();

    require(g.vae.lr > 0 && g.diffusion.lr > 0, "learning rates must be positive");
    require(g.vae.epochs > 0 && g.diffusion.epochs > 0, "epochs must be positive");
    require(g.vae.batch > 1 && g.diffusion.batch > 1, "batch sizes must exceed 1");
    require(g.vae.weights.beta >= 0 && g.vae.weights.mmd >= 0 && g.vae.weights.consistency >= 0 &&
                g.diffusion.weights.mmd >= 0 && g.diffusion.weights.consistency >= 0,
            "loss weights must be non-negative");
    require(g.diffusion.p_uncond >= 0 && g.diffusion.p_uncond <= 1, "p_uncond must lie in [0, 1]");
    require(g.guidance >= 0, "guidance must be non-negative");
    return g;
}

ClassifierConfig RunConfig::classifier() const {
    ClassifierConfig c;
    const auto& j = values_.at("classifier");
    c.hidden = j.at("hidden").get<int>();
    c.lr = j.at("lr").get<double>();
    c.batch = j.at("batch").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    require(c.hidden > 0 && c.lr > 0 && c.batch > 0 && c.max_epochs > 0 && c.patience >= 0,
            "classifier settings out of range");
    return c;
}

EvalProtocol RunConfig::protocol() const {
    EvalProtocol p;
    const auto& j = values_.at("protocol");
    p.n_synth = j.at("n_synth").get<int>();
    p.n_models = j.at("n_models").get<int>();
    p.n_split_seeds = j.at("n_split_seeds").get<int>();
    p.n_fidelity_runs = j.at("n_fidelity_runs").get<int>();
    p.classifier = classifier();
    require(p.n_synth > 0 && p.n_models > 0 && p.n_split_seeds > 0 && p.n_fidelity_runs > 0,
            "protocol counts must be positive");
    return p;
}

std::vector<AlignmentWeights> RunConfig::grid() const {
    std::vector<AlignmentWeights> out;
    for (const auto& row : values_.at("sweep").at("grid")) {
        require(row.is_array() && row.size() == 4, "each sweep.grid row must hold four weights");
        AlignmentWeights w{row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>()};
        require(w.ae_mmd >= 0 && w.ae_consistency >= 0 && w.diff_mmd >= 0 && w.diff_consistency >= 0,
                "sweep weights must be non-negative");
        out.push_back(w);
    }
    require(!out.empty(), "sweep.grid is empty");
    return out;
}

}  // namespace tadiff
