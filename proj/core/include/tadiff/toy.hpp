#pragma once

#include "tadiff/data.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tadiff {

/// Outcome model: logit = intercept + sum_f weight[f] * (mean_t v[t][f] - center[f]) / scale[f]
///                        + age_effect[a] + sex_effect[s] + ethnicity_effect[e]
struct ToyOutcomeModel {
    double intercept = 0.0;
    std::vector<double> weight;
    std::vector<double> center;
    std::vector<double> scale;
    std::vector<double> age_effect;        // 4
    std::vector<double> sex_effect;        // 2
    std::vector<double> ethnicity_effect;  // 4
};

/// Ground-truth generative process for a synthetic ICU-like cohort.
///
/// Per feature f and subgroup g the hourly series follows
///   v[t] = mu[f,g] + rho[f] (v[t-1] - mu[f,g]) + eta[t],  eta ~ N(0, innovation_sd[f]^2)
/// with v[0] drawn from the stationary law N(mu[f,g], innovation_sd[f]^2 / (1 - rho[f]^2)).
/// mu[f,g] = base_mean[f] + age_offset[a][f] + sex_offset[s][f] + ethnicity_offset[e][f].
/// Each cell is then hidden with probability missing_rate[f] and forward filled.
struct ToyPreset {
    std::string name = "icu-toy-v1";
    int n = 4000;
    int steps = 8;
    std::vector<std::string> feature_names;
    std::vector<double> base_mean;
    std::vector<double> rho;
    std::vector<double> innovation_sd;
    std::vector<std::vector<double>> age_offset;        // 4 x F
    std::vector<std::vector<double>> sex_offset;        // 2 x F
    std::vector<std::vector<double>> ethnicity_offset;  // 4 x F
    std::vector<double> age_marginal;                   // 4
    std::vector<double> sex_marginal;                   // 2
    std::vector<double> ethnicity_marginal;             // 4
    std::vector<double> missing_rate;                   // F
    std::string task = "mortality";
    std::map<std::string, ToyOutcomeModel> tasks;

    [[nodiscard]] int features() const noexcept { return static_cast<int>(base_mean.size()); }
    [[nodiscard]] const ToyOutcomeModel& outcome_model() const;
    [[nodiscard]] double subgroup_mean(int feature, const Demographics& d) const;
};

/// Built-in default preset "icu-toy-v1".
ToyPreset default_toy_preset();
ToyPreset toy_preset_from_json(const std::string& text);
std::string toy_preset_to_json(const ToyPreset& preset);
ToyPreset load_toy_preset(const std::filesystem::path& path);
/// Throws ErrorKind::Config on inconsistent shapes or out-of-range values.
void validate(const ToyPreset& preset);

struct ToyDraw {
    Matrix raw;              // T x F with NaN for hidden cells
    Matrix truth;            // T x F before missingness
    double outcome_probability = 0.0;
    int outcome = 0;
};

class ToyProcess {
public:
    explicit ToyProcess(ToyPreset preset);

    [[nodiscard]] const ToyPreset& preset() const noexcept { return preset_; }
    [[nodiscard]] Demographics sample_demographics(RngStream& rng) const;
    [[nodiscard]] ToyDraw sample(const Demographics& demo, RngStream& rng) const;
    [[nodiscard]] double outcome_probability(const Matrix& truth, const Demographics& demo) const;

    /// Draws a full cohort; ids are 0..n-1 and fill values are observed medians.
    [[nodiscard]] Cohort sample_cohort(std::uint64_t seed) const;

    /// Draws records for exactly the requested conditions by rejection on
    /// the outcome; fill values and metadata come from `meta`.
    [[nodiscard]] Cohort sample_conditional(std::span<const Condition> conds, const CohortMeta& meta, RngStream& rng,
                                            int max_tries = 10000) const;

private:
    ToyPreset preset_;
};

/// Convenience wrapper: ToyProcess(preset).sample_cohort(seed).
Cohort synth_toy_cohort(const ToyPreset& preset, std::uint64_t seed);

}  // namespace tadiff
