#include "tadiff/toy.hpp"

#include "tadiff/error.hpp"
#include "tadiff/rejection.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace tadiff {

using nlohmann::json;

const ToyOutcomeModel& ToyPreset::outcome_model() const {
    const auto it = tasks.find(task);
    if (it == tasks.end()) fail(ErrorKind::Config, "toy preset has no outcome model for task '" + task + "'");
    return it->second;
}

double ToyPreset::subgroup_mean(int f, const Demographics& d) const {
    return base_mean[f] + age_offset[static_cast<int>(d.age)][f] + sex_offset[static_cast<int>(d.sex)][f] +
           ethnicity_offset[static_cast<int>(d.ethnicity)][f];
}

ToyPreset default_toy_preset() {
    ToyPreset p;
    p.feature_names = {"heart_rate", "respiratory_rate", "oxygen_saturation", "mean_blood_pressure"};
    p.base_mean = {85.0, 18.0, 96.0, 80.0};
    p.rho = {0.8, 0.7, 0.75, 0.8};
    p.innovation_sd = {4.0, 1.5, 1.0, 4.0};
    p.age_offset = {{-2.0, -1.0, 0.5, -3.0}, {0.0, 0.0, 0.2, 0.0}, {1.0, 0.5, -0.3, 2.0}, {3.0, 1.0, -0.8, 3.0}};
    p.sex_offset = {{0.0, 0.0, 0.0, 2.0}, {2.0, 0.3, 0.2, 0.0}};
    p.ethnicity_offset = {{0.0, 0.0, 0.0, 0.0}, {1.5, 0.5, -0.5, 2.0}, {-1.0, -0.3, 0.2, -1.0}, {0.5, 0.0, 0.0, 0.0}};
    p.age_marginal = {0.15, 0.25, 0.35, 0.25};
    p.sex_marginal = {0.5, 0.5};
    p.ethnicity_marginal = {0.5, 0.2, 0.15, 0.15};
    p.missing_rate = {0.1, 0.15, 0.1, 0.2};

    ToyOutcomeModel mortality;
    mortality.intercept = -1.8;
    mortality.weight = {0.9, 0.7, -0.9, -0.6};
    mortality.center = p.base_mean;
    mortality.scale = {6.7, 2.1, 1.5, 6.7};
    mortality.age_effect = {-0.8, -0.3, 0.2, 0.7};
    mortality.sex_effect = {0.1, -0.1};
    mortality.ethnicity_effect = {0.0, 0.15, -0.1, 0.05};

    ToyOutcomeModel los;
    los.intercept = -0.2;
    los.weight = {0.5, 0.6, -0.4, -0.7};
    los.center = p.base_mean;
    los.scale = mortality.scale;
    los.age_effect = {-0.4, -0.1, 0.1, 0.3};
    los.sex_effect = {0.0, 0.0};
    los.ethnicity_effect = {0.0, 0.1, -0.1, 0.0};

    p.tasks = {{"mortality", mortality}, {"los_binary", los}};
    return p;
}

void validate(const ToyPreset& p) {
    const auto F = static_cast<std::size_t>(p.features());
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) fail(ErrorKind::Config, "toy preset: " + msg);
    };
    need(p.n > 0, "n must be positive");
    need(p.steps > 0, "T must be positive");
    need(F > 0, "at least one feature is required");
    need(p.feature_names.size() == F, "feature_names length != F");
    need(p.rho.size() == F && p.innovation_sd.size() == F && p.missing_rate.size() == F, "per-feature arrays need F entries");
    for (std::size_t f = 0; f < F; ++f) {
        need(std::abs(p.rho[f]) < 1.0, "|rho| must be < 1");
        need(p.innovation_sd[f] >= 0.0, "innovation_sd must be >= 0");
        need(p.missing_rate[f] >= 0.0 && p.missing_rate[f] < 1.0, "missing_rate must be in [0, 1)");
    }
    auto table = [&](const std::vector<std::vector<double>>& t, std::size_t rows, const char* name) {
        need(t.size() == rows, std::string(name) + " needs " + std::to_string(rows) + " rows");
        for (const auto& r : t) need(r.size() == F, std::string(name) + " rows need F entries");
    };
    table(p.age_offset, kAgeBrackets, "age_offset");
    table(p.sex_offset, kSexes, "sex_offset");
    table(p.ethnicity_offset, kEthnicities, "ethnicity_offset");
    auto marginal = [&](const std::vector<double>& m, std::size_t k, const char* name) {
        need(m.size() == k, std::string(name) + " needs " + std::to_string(k) + " entries");
        double total = 0.0;
        for (double v : m) {
            need(v >= 0.0, std::string(name) + " entries must be >= 0");
            total += v;
        }
        need(total > 0.0, std::string(name) + " must have positive mass");
    };
    marginal(p.age_marginal, kAgeBrackets, "age_marginal");
    marginal(p.sex_marginal, kSexes, "sex_marginal");
    marginal(p.ethnicity_marginal, kEthnicities, "ethnicity_marginal");
    need(!p.tasks.empty(), "at least one task outcome model is required");
    for (const auto& [name, m] : p.tasks) {
        need(m.weight.size() == F && m.center.size() == F && m.scale.size() == F, "task '" + name + "' needs F weights");
        for (double s : m.scale) need(s > 0.0, "task '" + name + "' scales must be positive");
        need(m.age_effect.size() == kAgeBrackets && m.sex_effect.size() == kSexes &&
                 m.ethnicity_effect.size() == kEthnicities,
             "task '" + name + "' effect arrays have wrong length");
    }
    need(p.tasks.contains(p.task), "task '" + p.task + "' has no outcome model");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!allowed.contains(key)) fail(ErrorKind::Config, where + ": unknown key '" + key + "'");
}

json outcome_to_json(const ToyOutcomeModel& m) {
    return json{{"intercept", m.intercept},   {"weight", m.weight},         {"center", m.center},
                {"scale", m.scale},           {"age_effect", m.age_effect}, {"sex_effect", m.sex_effect},
                {"ethnicity_effect", m.ethnicity_effect}};
}

ToyOutcomeModel outcome_from_json(const json& j, const std::string& where) {
    reject_unknown(j, {"intercept", "weight", "center", "scale", "age_effect", "sex_effect", "ethnicity_effect"}, where);
    ToyOutcomeModel m;
    m.intercept = j.at("intercept").get<double>();
    m.weight = j.at("weight").get<std::vector<double>>();
    m.center = j.at("center").get<std::vector<double>>();
    m.scale = j.at("scale").get<std::vector<double>>();
    m.age_effect = j.at("age_effect").get<std::vector<double>>();
    m.sex_effect = j.at("sex_effect").get<std::vector<double>>();
    m.ethnicity_effect = j.at("ethnicity_effect").get<std::vector<double>>();
    return m;
}

}  // namespace

std::string toy_preset_to_json(const ToyPreset& p) {
    json tasks = json::object();
    for (const auto& [name, m] : p.tasks) tasks[name] = outcome_to_json(m);
    const json j{{"name", p.name},
                 {"n", p.n},
                 {"T", p.steps},
                 {"feature_names", p.feature_names},
                 {"base_mean", p.base_mean},
                 {"rho", p.rho},
                 {"innovation_sd", p.innovation_sd},
                 {"age_offset", p.age_offset},
                 {"sex_offset", p.sex_offset},
                 {"ethnicity_offset", p.ethnicity_offset},
                 {"age_marginal", p.age_marginal},
                 {"sex_marginal", p.sex_marginal},
                 {"ethnicity_marginal", p.ethnicity_marginal},
                 {"missing_rate", p.missing_rate},
                 {"task", p.task},
                 {"tasks", tasks}};
    return j.dump(2);
}

ToyPreset toy_preset_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("toy preset: ") + e.what());
    }
    // Partial presets override the built-in defaults key by key.
    ToyPreset p = default_toy_preset();
    reject_unknown(j,
                   {"name", "n", "T", "feature_names", "base_mean", "rho", "innovation_sd", "age_offset", "sex_offset",
                    "ethnicity_offset", "age_marginal", "sex_marginal", "ethnicity_marginal", "missing_rate", "task",
                    "tasks"},
                   "toy preset");
    try {
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        take("name", p.name);
        take("n", p.n);
        take("T", p.steps);
        take("feature_names", p.feature_names);
        take("base_mean", p.base_mean);
        take("rho", p.rho);
        take("innovation_sd", p.innovation_sd);
        take("age_offset", p.age_offset);
        take("sex_offset", p.sex_offset);
        take("ethnicity_offset", p.ethnicity_offset);
        take("age_marginal", p.age_marginal);
        take("sex_marginal", p.sex_marginal);
        take("ethnicity_marginal", p.ethnicity_marginal);
        take("missing_rate", p.missing_rate);
        take("task", p.task);
        if (j.contains("tasks")) {
            p.tasks.clear();
            for (const auto& [name, m] : j.at("tasks").items())
                p.tasks[name] = outcome_from_json(m, "toy preset task '" + name + "'");
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("toy preset: ") + e.what());
    }
    validate(p);
    return p;
}

ToyPreset load_toy_preset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, "cannot read toy preset " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return toy_preset_from_json(ss.str());
}

ToyProcess::ToyProcess(ToyPreset preset) : preset_(std::move(preset)) { validate(preset_); }

Demographics ToyProcess::sample_demographics(RngStream& rng) const {
    Demographics d;
    d.age = static_cast<AgeBracket>(rng.categorical(preset_.age_marginal));
    d.sex = static_cast<Sex>(rng.categorical(preset_.sex_marginal));
    d.ethnicity = static_cast<Ethnicity>(rng.categorical(preset_.ethnicity_marginal));
    return d;
}

double ToyProcess::outcome_probability(const Matrix& truth, const Demographics& d) const {
    const auto& m = preset_.outcome_model();
    double logit = m.intercept + m.age_effect[static_cast<int>(d.age)] + m.sex_effect[static_cast<int>(d.sex)] +
                   m.ethnicity_effect[static_cast<int>(d.ethnicity)];
    for (int f = 0; f < preset_.features(); ++f) logit += m.weight[f] * (truth.col(f).mean() - m.center[f]) / m.scale[f];
    return sigmoid(logit);
}

ToyDraw ToyProcess::sample(const Demographics& demo, RngStream& rng) const {
    const int T = preset_.steps;
    const int F = preset_.features();
    ToyDraw draw;
    draw.truth.resize(T, F);
    for (int f = 0; f < F; ++f) {
        const double mu = preset_.subgroup_mean(f, demo);
        const double rho = preset_.rho[f];
        const double s = preset_.innovation_sd[f];
        double v = mu + rng.normal() * s / std::sqrt(1.0 - rho * rho);
        draw.truth(0, f) = v;
        for (int t = 1; t < T; ++t) {
            v = mu + rho * (v - mu) + rng.normal() * s;
            draw.truth(t, f) = v;
        }
    }
    draw.outcome_probability = outcome_probability(draw.truth, demo);
    draw.outcome = rng.bernoulli(draw.outcome_probability) ? 1 : 0;
    draw.raw = draw.truth;
    for (int t = 0; t < T; ++t)
        for (int f = 0; f < F; ++f)
            if (rng.bernoulli(preset_.missing_rate[f])) draw.raw(t, f) = std::numeric_limits<double>::quiet_NaN();
    return draw;
}

Cohort ToyProcess::sample_cohort(std::uint64_t seed) const {
    const RngStream root(seed);
    std::vector<Matrix> raws;
    std::vector<Condition> conds;
    raws.reserve(static_cast<std::size_t>(preset_.n));
    for (int i = 0; i < preset_.n; ++i) {
        RngStream rng = root.child("record", static_cast<std::uint64_t>(i));
        const Demographics demo = sample_demographics(rng);
        ToyDraw draw = sample(demo, rng);
        raws.push_back(std::move(draw.raw));
        conds.push_back(Condition{demo, draw.outcome});
    }
    Cohort cohort;
    cohort.meta.feature_names = preset_.feature_names;
    cohort.meta.steps = preset_.steps;
    cohort.meta.features = preset_.features();
    cohort.meta.task = preset_.task;
    cohort.meta.fill_values = observed_medians(raws);
    cohort.records.reserve(raws.size());
    for (std::size_t i = 0; i < raws.size(); ++i) {
        auto filled = forward_fill(raws[i], cohort.meta.fill_values);
        cohort.records.push_back(
            PatientRecord{static_cast<std::int64_t>(i), std::move(filled.values), std::move(filled.mask), conds[i]});
    }
    return cohort;
}

Cohort ToyProcess::sample_conditional(std::span<const Condition> conds, const CohortMeta& meta, RngStream& rng,
                                      int max_tries) const {
    if (meta.steps != preset_.steps || meta.features != preset_.features())
        fail(ErrorKind::Input, "toy sample_conditional: metadata shape does not match the preset");
    if (meta.norm) fail(ErrorKind::Input, "toy sample_conditional: expects raw-unit metadata");
    Cohort out;
    out.meta = meta;
    out.records.reserve(conds.size());
    for (std::size_t i = 0; i < conds.size(); ++i) {
        RngStream local = rng.child("conditional", i);
        auto draw_one = [&]() {
            ToyDraw d = sample(conds[i].demo, local);
            auto filled = forward_fill(d.raw, meta.fill_values);
            return PatientRecord{static_cast<std::int64_t>(i), std::move(filled.values), std::move(filled.mask),
                                 Condition{conds[i].demo, d.outcome}};
        };
        out.records.push_back(rejection_sample_conditional(draw_one, conds[i], max_tries).record);
    }
    return out;
}

Cohort synth_toy_cohort(const ToyPreset& preset, std::uint64_t seed) { return ToyProcess(preset).sample_cohort(seed); }

}  // namespace tadiff
