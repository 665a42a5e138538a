#include "tadiff/checkpoint.hpp"

#include "tadiff/error.hpp"

#include <fstream>

namespace tadiff {

namespace {

constexpr int kCheckpointVersion = 1;

void check_version(const Json& j, const std::string& kind) {
    if (j.value("kind", std::string()) != kind)
        fail(ErrorKind::Schema, "checkpoint: expected kind '" + kind + "', found '" + j.value("kind", std::string("?")) + "'");
    if (j.value("format_version", -1) != kCheckpointVersion)
        fail(ErrorKind::Schema, "checkpoint: unsupported format_version in " + kind);
}

Json norm_to_json(const NormStats& s) { return Json{{"mean", s.mean}, {"sd", s.sd}}; }

}  // namespace

Json params_to_json(const nn::ParamSet& params) {
    Json out = Json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(p.value.size()));
        for (Eigen::Index r = 0; r < p.value.rows(); ++r)
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) data.push_back(p.value(r, c));
        out.push_back(Json{{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"data", data}});
    }
    return out;
}

void params_from_json(const Json& j, nn::ParamSet& target) {
    if (!j.is_array() || j.size() != target.size())
        fail(ErrorKind::Schema, "checkpoint: parameter list does not match the model layout");
    for (std::size_t i = 0; i < target.size(); ++i) {
        auto& p = target[i];
        const auto& e = j[i];
        const auto name = e.at("name").get<std::string>();
        if (name != p.name) fail(ErrorKind::Schema, "checkpoint: expected parameter '" + p.name + "', found '" + name + "'");
        const auto rows = e.at("rows").get<Eigen::Index>();
        const auto cols = e.at("cols").get<Eigen::Index>();
        const auto data = e.at("data").get<std::vector<double>>();
        if (rows != p.value.rows() || cols != p.value.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols)
            fail(ErrorKind::Schema, "checkpoint: shape mismatch for '" + name + "'");
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) p.value(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
    if (!target.all_finite()) fail(ErrorKind::Schema, "checkpoint: non-finite parameter");
}

Json vae_to_json(const VaeParams& vae, std::uint64_t config_hash) {
    return Json{{"kind", "vae"},
                {"format_version", kCheckpointVersion},
                {"config_hash", config_hash},
                {"dims", {{"features", vae.dims.features}, {"latent", vae.dims.latent}, {"hidden", vae.dims.hidden}}},
                {"params", params_to_json(vae.params)}};
}

VaeParams vae_from_json(const Json& j) {
    try {
        check_version(j, "vae");
        VaeDims dims;
        dims.features = j.at("dims").at("features").get<int>();
        dims.latent = j.at("dims").at("latent").get<int>();
        dims.hidden = j.at("dims").at("hidden").get<int>();
        VaeParams vae = VaeParams::zeros(dims);
        params_from_json(j.at("params"), vae.params);
        return vae;
    } catch (const Json::exception& e) {
        fail(ErrorKind::Schema, std::string("vae checkpoint: ") + e.what());
    }
}

Json bundle_to_json(const GeneratorBundle& b) {
    const auto& d = b.denoiser.dims;
    return Json{{"kind", "generator_bundle"},
                {"format_version", kCheckpointVersion},
                {"bundle_version", GeneratorBundle::kFormatVersion},
                {"config_hash", b.config_hash},
                {"guidance", b.guidance},
                {"meta", meta_to_json(b.meta)},
                {"norm", norm_to_json(b.norm)},
                {"schedule", {{"beta", b.schedule.beta}}},
                {"vae", vae_to_json(b.vae, b.config_hash)},
                {"denoiser",
                 {{"dims",
                   {{"latent", d.latent}, {"hidden", d.hidden}, {"time_embed", d.time_embed}, {"cond_embed", d.cond_embed}}},
                  {"params", params_to_json(b.denoiser.params)}}}};
}

GeneratorBundle bundle_from_json(const Json& j) {
    try {
        check_version(j, "generator_bundle");
        if (j.at("bundle_version").get<int>() != GeneratorBundle::kFormatVersion)
            fail(ErrorKind::Schema, "bundle: unsupported bundle_version");
        GeneratorBundle b;
        b.config_hash = j.at("config_hash").get<std::uint64_t>();
        b.guidance = j.at("guidance").get<double>();
        b.meta = meta_from_json(j.at("meta"));
        b.norm.mean = j.at("norm").at("mean").get<std::vector<double>>();
        b.norm.sd = j.at("norm").at("sd").get<std::vector<double>>();
        const auto beta = j.at("schedule").at("beta").get<std::vector<double>>();
        if (beta.empty()) fail(ErrorKind::Schema, "bundle: empty schedule");
        // Rebuild alpha and alpha_bar from the stored betas so the schedule is exact.
        b.schedule.beta = beta;
        double running = 1.0;
        for (double v : beta) {
            if (!(v > 0.0 && v < 1.0)) fail(ErrorKind::Schema, "bundle: schedule beta outside (0, 1)");
            b.schedule.alpha.push_back(1.0 - v);
            running *= 1.0 - v;
            b.schedule.alpha_bar.push_back(running);
        }
        b.vae = vae_from_json(j.at("vae"));
        DenoiserDims d;
        const auto& jd = j.at("denoiser").at("dims");
        d.latent = jd.at("latent").get<int>();
        d.hidden = jd.at("hidden").get<int>();
        d.time_embed = jd.at("time_embed").get<int>();
        d.cond_embed = jd.at("cond_embed").get<int>();
        b.denoiser = DenoiserParams::zeros(d);
        params_from_json(j.at("denoiser").at("params"), b.denoiser.params);
        if (b.vae.dims.features != b.meta.features || d.latent != b.vae.dims.latent)
            fail(ErrorKind::Schema, "bundle: component dimensions disagree");
        return b;
    } catch (const Json::exception& e) {
        fail(ErrorKind::Schema, std::string("bundle: ") + e.what());
    }
}

Json classifier_to_json(const GruClassifier& model, const ClassifierConfig& config) {
    return Json{{"kind", "classifier"},
                {"format_version", kCheckpointVersion},
                {"classifier_hash", classifier_config_hash(config)},
                {"features", model.features},
                {"hidden", model.hidden},
                {"params", params_to_json(model.params)}};
}

GruClassifier classifier_from_json(const Json& j) {
    try {
        check_version(j, "classifier");
        GruClassifier m = GruClassifier::zeros(j.at("features").get<int>(), j.at("hidden").get<int>());
        params_from_json(j.at("params"), m.params);
        return m;
    } catch (const Json::exception& e) {
        fail(ErrorKind::Schema, std::string("classifier checkpoint: ") + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

Json read_json(const std::filesystem::path& path, const std::string& what) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::Prerequisite, "missing " + what + ": " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        fail(ErrorKind::Schema, what + " (" + path.string() + "): " + e.what());
    }
}

}  // namespace tadiff
