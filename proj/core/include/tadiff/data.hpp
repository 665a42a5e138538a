#pragma once

#include "tadiff/numerics.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tadiff {

enum class AgeBracket : std::uint8_t { Under30, From31To50, From51To70, Over70 };
enum class Sex : std::uint8_t { Male, Female };
enum class Ethnicity : std::uint8_t { White, Black, Asian, Other };

inline constexpr int kAgeBrackets = 4;
inline constexpr int kSexes = 2;
inline constexpr int kEthnicities = 4;
inline constexpr int kSubgroups = kAgeBrackets * kSexes * kEthnicities;  // 32

inline constexpr std::array<std::string_view, kAgeBrackets> kAgeVocabulary{"<30", "31-50", "51-70", ">70"};
inline constexpr std::array<std::string_view, kSexes> kSexVocabulary{"M", "F"};
inline constexpr std::array<std::string_view, kEthnicities> kEthnicityVocabulary{"White", "Black", "Asian", "Other"};

struct Demographics {
    AgeBracket age = AgeBracket::Under30;
    Sex sex = Sex::Male;
    Ethnicity ethnicity = Ethnicity::White;

    /// Dense key in [0, 32): age-major, then sex, then ethnicity.
    [[nodiscard]] int subgroup_index() const noexcept {
        return static_cast<int>(age) * kSexes * kEthnicities + static_cast<int>(sex) * kEthnicities +
               static_cast<int>(ethnicity);
    }
    [[nodiscard]] static Demographics from_index(int index);
    [[nodiscard]] std::string label() const;

    friend auto operator<=>(const Demographics&, const Demographics&) = default;
};

struct Condition {
    Demographics demo;
    int outcome = 0;

    friend auto operator<=>(const Condition&, const Condition&) = default;
};

/// Width of the one-hot condition encoding: 4 age + 2 sex + 4 ethnicity + 2 outcome.
inline constexpr int kConditionWidth = kAgeBrackets + kSexes + kEthnicities + 2;

/// One-hot encoding of a condition in the fixed vocabulary order.
RowVector one_hot(const Condition& c);

AgeBracket parse_age(std::string_view s);
Sex parse_sex(std::string_view s);
Ethnicity parse_ethnicity(std::string_view s);

/// One ICU stay. values and mask are T x F; mask entries are 0.0 or 1.0.
struct PatientRecord {
    std::int64_t id = 0;
    Matrix values;
    Matrix mask;
    Condition condition;

    [[nodiscard]] int outcome() const noexcept { return condition.outcome; }
    friend bool operator==(const PatientRecord& a, const PatientRecord& b);
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> sd;
    friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct CohortMeta {
    static constexpr int kFormatVersion = 1;

    std::vector<std::string> feature_names;
    int steps = 0;     // T
    int features = 0;  // F
    std::string task = "mortality";
    /// Cold-start fill value per feature, in the same units as the stored values.
    std::vector<double> fill_values;
    std::optional<NormStats> norm;

    friend bool operator==(const CohortMeta&, const CohortMeta&) = default;
};

struct Cohort {
    CohortMeta meta;
    std::vector<PatientRecord> records;

    [[nodiscard]] std::size_t size() const noexcept { return records.size(); }
    [[nodiscard]] bool empty() const noexcept { return records.empty(); }
    friend bool operator==(const Cohort&, const Cohort&) = default;
};

/// Throws ErrorKind::Schema describing the first violated invariant.
void validate(const Cohort& cohort);

[[nodiscard]] std::vector<Condition> conditions(const Cohort& cohort);
[[nodiscard]] std::vector<int> outcomes(const Cohort& cohort);
[[nodiscard]] Cohort select(const Cohort& cohort, std::span<const std::size_t> indices);
/// Empty cohort sharing the metadata of `like`.
[[nodiscard]] Cohort empty_like(const Cohort& like);

// ---------------------------------------------------------------------------
// Preprocessing

struct FilledSeries {
    Matrix values;
    Matrix mask;
};

/// Carries the last observed value forward within each column. Cells before
/// the first observation take fill_values[column]. NaN marks a missing cell.
FilledSeries forward_fill(const Matrix& raw, std::span<const double> fill_values);

/// Re-applies forward filling to already-filled values given their mask.
Matrix refill(const Matrix& values, const Matrix& mask, std::span<const double> fill_values);

/// Per-feature median of observed (non-NaN) cells across raw matrices.
/// Features never observed get 0.
std::vector<double> observed_medians(std::span<const Matrix> raw);

/// Mean and sd of observed cells per feature.
NormStats compute_norm_stats(const Cohort& cohort);
/// z-scores values (and fill values) using `stats`, or statistics computed from
/// this cohort when omitted. Masks are untouched.
Cohort normalize(const Cohort& cohort, const std::optional<NormStats>& stats = std::nullopt);
Cohort denormalize(const Cohort& cohort);

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
    double train = 0.45;
    double holdout = 0.45;
    double holdout_val = 0.10;
    std::uint64_t seed = 0;
};

struct CohortSplits {
    Cohort train;
    Cohort holdout;
    Cohort holdout_val;
};

/// Stratum key used for splitting: outcome x age x sex x ethnicity.
int stratum_key(const Condition& c) noexcept;

/// Integer allocation of n items to categories with the given fractions:
/// every count is floor or ceil of n*fraction. Remaining seats go to the
/// categories with the largest (carry + fractional part); carry holds the
/// running difference between exact and allocated totals and is updated.
std::vector<std::size_t> apportion(std::size_t n, std::span<const double> fractions, std::span<double> carry);

CohortSplits stratified_split(const Cohort& cohort, const SplitSpec& spec);

using SubgroupIndex = std::array<std::vector<std::size_t>, kSubgroups>;

/// Record indices for each of the 32 intersectional subgroups.
SubgroupIndex subgroup_partition(const Cohort& cohort);

struct SubgroupSplit {
    Cohort large;  // 80%
    Cohort small;  // 20%
    /// Set when either outcome class has fewer than two records in the group.
    bool sparse_class = false;
};

/// 80/20 split stratified by outcome.
SubgroupSplit subgroup_80_20_split(const Cohort& group, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Storage: <dir>/meta.json + <dir>/records.ndjson

Cohort load_cohort(const std::filesystem::path& dir);
void save_cohort(const Cohort& cohort, const std::filesystem::path& dir);

}  // namespace tadiff
