#include "tadiff/data.hpp"

#include "tadiff/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace tadiff {

using nlohmann::json;

Demographics Demographics::from_index(int index) {
    if (index < 0 || index >= kSubgroups) fail(ErrorKind::Input, "subgroup index out of range");
    Demographics d;
    d.age = static_cast<AgeBracket>(index / (kSexes * kEthnicities));
    d.sex = static_cast<Sex>((index / kEthnicities) % kSexes);
    d.ethnicity = static_cast<Ethnicity>(index % kEthnicities);
    return d;
}

std::string Demographics::label() const {
    return std::string(kAgeVocabulary[static_cast<int>(age)]) + "/" + std::string(kSexVocabulary[static_cast<int>(sex)]) +
           "/" + std::string(kEthnicityVocabulary[static_cast<int>(ethnicity)]);
}

RowVector one_hot(const Condition& c) {
    RowVector v = RowVector::Zero(kConditionWidth);
    v[static_cast<int>(c.demo.age)] = 1.0;
    v[kAgeBrackets + static_cast<int>(c.demo.sex)] = 1.0;
    v[kAgeBrackets + kSexes + static_cast<int>(c.demo.ethnicity)] = 1.0;
    v[kAgeBrackets + kSexes + kEthnicities + (c.outcome != 0 ? 1 : 0)] = 1.0;
    return v;
}

namespace {

template <std::size_t N>
int vocab_index(const std::array<std::string_view, N>& vocab, std::string_view s, const char* field) {
    for (std::size_t i = 0; i < N; ++i)
        if (vocab[i] == s) return static_cast<int>(i);
    fail(ErrorKind::Schema, std::string("unknown ") + field + " '" + std::string(s) + "'");
}

}  // namespace

AgeBracket parse_age(std::string_view s) { return static_cast<AgeBracket>(vocab_index(kAgeVocabulary, s, "age_bracket")); }
Sex parse_sex(std::string_view s) { return static_cast<Sex>(vocab_index(kSexVocabulary, s, "sex")); }
Ethnicity parse_ethnicity(std::string_view s) {
    return static_cast<Ethnicity>(vocab_index(kEthnicityVocabulary, s, "ethnicity"));
}

bool operator==(const PatientRecord& a, const PatientRecord& b) {
    if (a.id != b.id || a.condition != b.condition) return false;
    if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols()) return false;
    if (a.mask.rows() != b.mask.rows() || a.mask.cols() != b.mask.cols()) return false;
    return a.values == b.values && a.mask == b.mask;
}

void validate(const Cohort& cohort) {
    const auto& m = cohort.meta;
    if (m.steps <= 0 || m.features <= 0) fail(ErrorKind::Schema, "cohort metadata must have positive T and F");
    if (static_cast<int>(m.feature_names.size()) != m.features)
        fail(ErrorKind::Schema, "feature_names has " + std::to_string(m.feature_names.size()) + " entries, F is " +
                                    std::to_string(m.features));
    if (static_cast<int>(m.fill_values.size()) != m.features) fail(ErrorKind::Schema, "fill_values length != F");
    if (m.norm && (static_cast<int>(m.norm->mean.size()) != m.features || static_cast<int>(m.norm->sd.size()) != m.features))
        fail(ErrorKind::Schema, "normalization stats length != F");
    for (const auto& r : cohort.records) {
        const std::string who = "record " + std::to_string(r.id);
        if (r.values.rows() != m.steps || r.values.cols() != m.features)
            fail(ErrorKind::Schema, who + ": values are " + std::to_string(r.values.rows()) + "x" +
                                        std::to_string(r.values.cols()) + ", expected " + std::to_string(m.steps) + "x" +
                                        std::to_string(m.features));
        if (r.mask.rows() != m.steps || r.mask.cols() != m.features) fail(ErrorKind::Schema, who + ": mask shape mismatch");
        if (!r.values.allFinite()) fail(ErrorKind::Schema, who + ": non-finite value");
        if (((r.mask.array() != 0.0) && (r.mask.array() != 1.0)).any()) fail(ErrorKind::Schema, who + ": mask must be 0/1");
        if (r.condition.outcome != 0 && r.condition.outcome != 1) fail(ErrorKind::Schema, who + ": outcome must be 0/1");
        if (refill(r.values, r.mask, m.fill_values) != r.values)
            fail(ErrorKind::Schema, who + ": unobserved cells do not hold their forward-fill value");
    }
}

std::vector<Condition> conditions(const Cohort& cohort) {
    std::vector<Condition> out;
    out.reserve(cohort.size());
    for (const auto& r : cohort.records) out.push_back(r.condition);
    return out;
}

std::vector<int> outcomes(const Cohort& cohort) {
    std::vector<int> out;
    out.reserve(cohort.size());
    for (const auto& r : cohort.records) out.push_back(r.condition.outcome);
    return out;
}

Cohort select(const Cohort& cohort, std::span<const std::size_t> indices) {
    Cohort out = empty_like(cohort);
    out.records.reserve(indices.size());
    for (auto i : indices) out.records.push_back(cohort.records.at(i));
    return out;
}

Cohort empty_like(const Cohort& like) {
    Cohort out;
    out.meta = like.meta;
    return out;
}

// ---------------------------------------------------------------------------

FilledSeries forward_fill(const Matrix& raw, std::span<const double> fill_values) {
    if (static_cast<Eigen::Index>(fill_values.size()) != raw.cols())
        fail(ErrorKind::Input, "forward_fill: fill_values length != feature count");
    FilledSeries out{raw, Matrix::Ones(raw.rows(), raw.cols())};
    for (Eigen::Index f = 0; f < raw.cols(); ++f) {
        double carry = fill_values[static_cast<std::size_t>(f)];
        for (Eigen::Index t = 0; t < raw.rows(); ++t) {
            if (std::isnan(raw(t, f))) {
                out.values(t, f) = carry;
                out.mask(t, f) = 0.0;
            } else {
                carry = raw(t, f);
            }
        }
    }
    return out;
}

Matrix refill(const Matrix& values, const Matrix& mask, std::span<const double> fill_values) {
    Matrix raw = values;
    for (Eigen::Index t = 0; t < raw.rows(); ++t)
        for (Eigen::Index f = 0; f < raw.cols(); ++f)
            if (mask(t, f) == 0.0) raw(t, f) = std::numeric_limits<double>::quiet_NaN();
    return forward_fill(raw, fill_values).values;
}

std::vector<double> observed_medians(std::span<const Matrix> raw) {
    if (raw.empty()) return {};
    const auto F = raw.front().cols();
    std::vector<double> out(static_cast<std::size_t>(F), 0.0);
    for (Eigen::Index f = 0; f < F; ++f) {
        std::vector<double> seen;
        for (const auto& m : raw)
            for (Eigen::Index t = 0; t < m.rows(); ++t)
                if (!std::isnan(m(t, f))) seen.push_back(m(t, f));
        if (!seen.empty()) out[static_cast<std::size_t>(f)] = median(std::move(seen));
    }
    return out;
}

NormStats compute_norm_stats(const Cohort& cohort) {
    const int F = cohort.meta.features;
    NormStats s{std::vector<double>(F, 0.0), std::vector<double>(F, 0.0)};
    for (int f = 0; f < F; ++f) {
        double sum = 0.0;
        double count = 0.0;
        for (const auto& r : cohort.records)
            for (Eigen::Index t = 0; t < r.values.rows(); ++t)
                if (r.mask(t, f) != 0.0) {
                    sum += r.values(t, f);
                    count += 1.0;
                }
        if (count < 2.0)
            fail(ErrorKind::Input, "normalize: feature '" + cohort.meta.feature_names[f] + "' has fewer than two observations");
        const double mean = sum / count;
        double ss = 0.0;
        for (const auto& r : cohort.records)
            for (Eigen::Index t = 0; t < r.values.rows(); ++t)
                if (r.mask(t, f) != 0.0) ss += (r.values(t, f) - mean) * (r.values(t, f) - mean);
        const double sd = std::sqrt(ss / (count - 1.0));
        if (!(sd > 0.0)) fail(ErrorKind::Input, "normalize: feature '" + cohort.meta.feature_names[f] + "' has zero sd");
        s.mean[f] = mean;
        s.sd[f] = sd;
    }
    return s;
}

Cohort normalize(const Cohort& cohort, const std::optional<NormStats>& stats) {
    if (cohort.meta.norm) fail(ErrorKind::Input, "normalize: cohort is already normalized");
    const NormStats s = stats ? *stats : compute_norm_stats(cohort);
    const int F = cohort.meta.features;
    if (static_cast<int>(s.mean.size()) != F || static_cast<int>(s.sd.size()) != F)
        fail(ErrorKind::Input, "normalize: stats length != feature count");
    for (int f = 0; f < F; ++f)
        if (!(s.sd[f] > 0.0)) fail(ErrorKind::Input, "normalize: feature '" + cohort.meta.feature_names[f] + "' has zero sd");
    Cohort out = cohort;
    for (int f = 0; f < F; ++f) out.meta.fill_values[f] = (cohort.meta.fill_values[f] - s.mean[f]) / s.sd[f];
    for (auto& r : out.records)
        for (int f = 0; f < F; ++f)
            for (Eigen::Index t = 0; t < r.values.rows(); ++t) r.values(t, f) = (r.values(t, f) - s.mean[f]) / s.sd[f];
    out.meta.norm = s;
    return out;
}

Cohort denormalize(const Cohort& cohort) {
    if (!cohort.meta.norm) fail(ErrorKind::Input, "denormalize: cohort carries no normalization stats");
    const NormStats& s = *cohort.meta.norm;
    Cohort out = cohort;
    const int F = cohort.meta.features;
    for (int f = 0; f < F; ++f) out.meta.fill_values[f] = cohort.meta.fill_values[f] * s.sd[f] + s.mean[f];
    for (auto& r : out.records) {
        for (int f = 0; f < F; ++f)
            for (Eigen::Index t = 0; t < r.values.rows(); ++t) r.values(t, f) = r.values(t, f) * s.sd[f] + s.mean[f];
        // Keep unobserved cells bit-identical to what forward filling would produce.
        r.values = refill(r.values, r.mask, out.meta.fill_values);
    }
    out.meta.norm.reset();
    return out;
}

// ---------------------------------------------------------------------------

int stratum_key(const Condition& c) noexcept { return (c.outcome != 0 ? kSubgroups : 0) + c.demo.subgroup_index(); }

std::vector<std::size_t> apportion(std::size_t n, std::span<const double> fractions, std::span<double> carry) {
    const std::size_t k = fractions.size();
    if (carry.size() != k) fail(ErrorKind::Input, "apportion: carry length mismatch");
    std::vector<std::size_t> counts(k, 0);
    std::vector<double> frac(k, 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = static_cast<double>(n) * fractions[i];
        const double base = std::floor(exact + 1e-9);
        counts[i] = static_cast<std::size_t>(base);
        frac[i] = std::max(0.0, exact - base);
        assigned += counts[i];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const bool fa = frac[a] > 1e-9, fb = frac[b] > 1e-9;
        if (fa != fb) return fa;
        return carry[a] + frac[a] > carry[b] + frac[b];
    });
    for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++counts[order[j % k]];
    for (std::size_t i = 0; i < k; ++i)
        carry[i] += static_cast<double>(n) * fractions[i] - static_cast<double>(counts[i]);
    return counts;
}

CohortSplits stratified_split(const Cohort& cohort, const SplitSpec& spec) {
    const std::array<double, 3> fractions{spec.train, spec.holdout, spec.holdout_val};
    for (double f : fractions)
        if (f < 0.0) fail(ErrorKind::Input, "stratified_split: negative fraction");
    if (std::abs(spec.train + spec.holdout + spec.holdout_val - 1.0) > 1e-9)
        fail(ErrorKind::Input, "stratified_split: fractions must sum to 1");

    // Canonical order: records sorted by id inside each stratum.
    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < cohort.size(); ++i) strata[stratum_key(cohort.records[i].condition)].push_back(i);

    const RngStream root(spec.seed);
    std::array<double, 3> carry{0.0, 0.0, 0.0};
    std::array<std::vector<std::pair<std::int64_t, std::size_t>>, 3> members;
    for (auto& [key, idx] : strata) {
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return cohort.records[a].id < cohort.records[b].id; });
        RngStream rng = root.child("stratum", static_cast<std::uint64_t>(key));
        rng.shuffle(idx);
        const auto counts = apportion(idx.size(), fractions, carry);
        std::size_t pos = 0;
        for (std::size_t s = 0; s < 3; ++s)
            for (std::size_t c = 0; c < counts[s]; ++c, ++pos)
                members[s].emplace_back(cohort.records[idx[pos]].id, idx[pos]);
    }

    auto build = [&](auto& list) {
        std::sort(list.begin(), list.end());
        std::vector<std::size_t> indices;
        indices.reserve(list.size());
        for (const auto& [id, i] : list) indices.push_back(i);
        return select(cohort, indices);
    };
    return CohortSplits{build(members[0]), build(members[1]), build(members[2])};
}

SubgroupIndex subgroup_partition(const Cohort& cohort) {
    SubgroupIndex out;
    for (std::size_t i = 0; i < cohort.size(); ++i)
        out[static_cast<std::size_t>(cohort.records[i].condition.demo.subgroup_index())].push_back(i);
    return out;
}

SubgroupSplit subgroup_80_20_split(const Cohort& group, std::uint64_t seed) {
    if (group.empty()) fail(ErrorKind::Input, "subgroup_80_20_split: empty group");
    const std::array<double, 2> fractions{0.8, 0.2};
    std::array<double, 2> carry{0.0, 0.0};
    std::array<std::vector<std::size_t>, 2> by_outcome;
    for (std::size_t i = 0; i < group.size(); ++i) by_outcome[group.records[i].outcome() != 0 ? 1 : 0].push_back(i);

    const RngStream root(seed);
    std::vector<std::pair<std::int64_t, std::size_t>> large, small;
    for (int y = 0; y < 2; ++y) {
        auto& idx = by_outcome[y];
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return group.records[a].id < group.records[b].id; });
        RngStream rng = root.child("outcome", static_cast<std::uint64_t>(y));
        rng.shuffle(idx);
        const auto counts = apportion(idx.size(), fractions, carry);
        for (std::size_t k = 0; k < idx.size(); ++k)
            (k < counts[0] ? large : small).emplace_back(group.records[idx[k]].id, idx[k]);
    }
    auto build = [&](auto& list) {
        std::sort(list.begin(), list.end());
        std::vector<std::size_t> indices;
        for (const auto& [id, i] : list) indices.push_back(i);
        return select(group, indices);
    };
    SubgroupSplit out{build(large), build(small), by_outcome[0].size() < 2 || by_outcome[1].size() < 2};
    return out;
}

// ---------------------------------------------------------------------------

json meta_to_json(const CohortMeta& m) {
    json j;
    j["format_version"] = CohortMeta::kFormatVersion;
    j["feature_names"] = m.feature_names;
    j["T"] = m.steps;
    j["F"] = m.features;
    j["task"] = m.task;
    j["fill_values"] = m.fill_values;
    j["vocabularies"] = {
        {"age_bracket", std::vector<std::string>(kAgeVocabulary.begin(), kAgeVocabulary.end())},
        {"sex", std::vector<std::string>(kSexVocabulary.begin(), kSexVocabulary.end())},
        {"ethnicity", std::vector<std::string>(kEthnicityVocabulary.begin(), kEthnicityVocabulary.end())},
    };
    if (m.norm)
        j["normalization"] = {{"mean", m.norm->mean}, {"sd", m.norm->sd}};
    else
        j["normalization"] = nullptr;
    return j;
}

namespace {

template <std::size_t N>
void check_vocab(const json& j, const char* key, const std::array<std::string_view, N>& expected) {
    if (!j.contains(key)) return;
    const auto got = j.at(key).get<std::vector<std::string>>();
    if (got.size() != N || !std::equal(got.begin(), got.end(), expected.begin()))
        fail(ErrorKind::Schema, std::string("meta.json: vocabulary '") + key + "' differs from the supported vocabulary");
}

}  // namespace

CohortMeta meta_from_json(const json& j) {
    try {
        const int version = j.at("format_version").get<int>();
        if (version != CohortMeta::kFormatVersion)
            fail(ErrorKind::Schema, "meta.json: unsupported format_version " + std::to_string(version));
        CohortMeta m;
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.steps = j.at("T").get<int>();
        m.features = j.at("F").get<int>();
        m.task = j.at("task").get<std::string>();
        m.fill_values = j.at("fill_values").get<std::vector<double>>();
        if (j.contains("vocabularies")) {
            const auto& v = j.at("vocabularies");
            check_vocab(v, "age_bracket", kAgeVocabulary);
            check_vocab(v, "sex", kSexVocabulary);
            check_vocab(v, "ethnicity", kEthnicityVocabulary);
        }
        if (j.contains("normalization") && !j.at("normalization").is_null()) {
            NormStats s;
            s.mean = j.at("normalization").at("mean").get<std::vector<double>>();
            s.sd = j.at("normalization").at("sd").get<std::vector<double>>();
            m.norm = std::move(s);
        }
        return m;
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("meta.json: ") + e.what());
    }
}

namespace {

json record_to_json(const PatientRecord& r) {
    json values = json::array();
    for (Eigen::Index t = 0; t < r.values.rows(); ++t)
        for (Eigen::Index f = 0; f < r.values.cols(); ++f)
            values.push_back(r.mask(t, f) != 0.0 ? json(r.values(t, f)) : json(nullptr));
    json j;
    j["id"] = r.id;
    j["values"] = std::move(values);
    j["age_bracket"] = std::string(kAgeVocabulary[static_cast<int>(r.condition.demo.age)]);
    j["sex"] = std::string(kSexVocabulary[static_cast<int>(r.condition.demo.sex)]);
    j["ethnicity"] = std::string(kEthnicityVocabulary[static_cast<int>(r.condition.demo.ethnicity)]);
    j["outcome"] = r.condition.outcome;
    return j;
}

PatientRecord record_from_json(const json& j, const CohortMeta& m) {
    PatientRecord r;
    r.id = j.at("id").get<std::int64_t>();
    const std::string who = "record " + std::to_string(r.id);
    const auto& values = j.at("values");
    if (!values.is_array()) fail(ErrorKind::Schema, who + ": values must be an array");
    const auto expected = static_cast<std::size_t>(m.steps) * static_cast<std::size_t>(m.features);
    if (values.size() != expected)
        fail(ErrorKind::Schema, who + ": has " + std::to_string(values.size() / std::max(1, m.features)) +
                                    " time steps (" + std::to_string(values.size()) + " values), meta declares T=" +
                                    std::to_string(m.steps) + ", F=" + std::to_string(m.features));
    Matrix raw(m.steps, m.features);
    for (int t = 0; t < m.steps; ++t)
        for (int f = 0; f < m.features; ++f) {
            const auto& cell = values[static_cast<std::size_t>(t * m.features + f)];
            if (cell.is_null()) {
                raw(t, f) = std::numeric_limits<double>::quiet_NaN();
            } else {
                const double v = cell.get<double>();
                if (!std::isfinite(v)) fail(ErrorKind::Schema, who + ": non-finite value");
                raw(t, f) = v;
            }
        }
    auto filled = forward_fill(raw, m.fill_values);
    r.values = std::move(filled.values);
    r.mask = std::move(filled.mask);
    r.condition.demo.age = parse_age(j.at("age_bracket").get<std::string>());
    r.condition.demo.sex = parse_sex(j.at("sex").get<std::string>());
    r.condition.demo.ethnicity = parse_ethnicity(j.at("ethnicity").get<std::string>());
    r.condition.outcome = j.at("outcome").get<int>();
    if (r.condition.outcome != 0 && r.condition.outcome != 1) fail(ErrorKind::Schema, who + ": outcome must be 0 or 1");
    return r;
}

}  // namespace

Cohort load_cohort(const std::filesystem::path& dir) {
    const auto meta_path = dir / "meta.json";
    const auto records_path = dir / "records.ndjson";
    if (!std::filesystem::exists(meta_path)) fail(ErrorKind::Prerequisite, "missing " + meta_path.string());
    if (!std::filesystem::exists(records_path)) fail(ErrorKind::Prerequisite, "missing " + records_path.string());

    Cohort cohort;
    {
        std::ifstream in(meta_path);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, meta_path.string() + ": " + e.what());
        }
        cohort.meta = meta_from_json(j);
    }
    if (static_cast<int>(cohort.meta.fill_values.size()) != cohort.meta.features)
        fail(ErrorKind::Schema, "meta.json: fill_values length != F");

    std::ifstream in(records_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            cohort.records.push_back(record_from_json(json::parse(line), cohort.meta));
        } catch (const Error& e) {
            throw Error(e.kind(), records_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, records_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (cohort.empty()) fail(ErrorKind::Schema, records_path.string() + ": no records");
    validate(cohort);
    return cohort;
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
    validate(cohort);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    {
        std::ofstream out(dir / "meta.json");
        if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "meta.json").string());
        out << meta_to_json(cohort.meta).dump(2) << '\n';
    }
    std::ofstream out(dir / "records.ndjson");
    if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "records.ndjson").string());
    for (const auto& r : cohort.records) out << record_to_json(r).dump() << '\n';
}

}  // namespace tadiff
