#pragma once

#include "tadiff/checkpoint.hpp"
#include "tadiff/data.hpp"
#include "tadiff/diffusion.hpp"
#include "tadiff/downstream.hpp"
#include "tadiff/toy.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tadiff {

/// Produces a synthetic cohort, in raw units, with exactly the conditions of
/// `reference` (same order).
class SyntheticSource {
public:
    virtual ~SyntheticSource() = default;
    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual Cohort generate(const Cohort& reference, RngStream& rng) const = 0;
};

class BundleGenerator final : public SyntheticSource {
public:
    explicit BundleGenerator(GeneratorBundle bundle, std::string name = "tadiff");
    [[nodiscard]] std::string name() const override { return name_; }
    [[nodiscard]] Cohort generate(const Cohort& reference, RngStream& rng) const override;
    [[nodiscard]] const GeneratorBundle& bundle() const noexcept { return bundle_; }

private:
    GeneratorBundle bundle_;
    std::string name_;
};

/// Returns the reference itself. Drives the exact-zero metamorphic checks.
class IdentityGenerator final : public SyntheticSource {
public:
    [[nodiscard]] std::string name() const override { return "identity"; }
    [[nodiscard]] Cohort generate(const Cohort& reference, RngStream& rng) const override;
};

/// Draws from the toy ground-truth process (rejection on the outcome).
class ToyOracleGenerator final : public SyntheticSource {
public:
    explicit ToyOracleGenerator(ToyPreset preset);
    [[nodiscard]] std::string name() const override { return "toy-oracle"; }
    [[nodiscard]] Cohort generate(const Cohort& reference, RngStream& rng) const override;

private:
    ToyProcess process_;
};

/// Repetition counts and the fixed downstream protocol.
struct EvalProtocol {
    int n_synth = 5;
    int n_models = 5;
    int n_split_seeds = 5;
    int n_fidelity_runs = 5;
    ClassifierConfig classifier;
    /// Optional progress sink; not part of any artifact.
    std::function<void(const std::string&)> progress;
};

// ---------------------------------------------------------------------------
// Utility

struct SyntheticRun {
    int synth_set = 0;
    int model = 0;
    double auroc = 0.0;
};

struct UtilityReport {
    std::string data;
    std::string task;
    std::string source;
    std::uint64_t config_hash = 0;
    std::uint64_t classifier_hash = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> model_seeds;
    std::vector<std::uint64_t> synthetic_seeds;
    bool training_arm = false;
    bool evaluation_arm = false;
    std::vector<double> trtr_train;       // one per model seed
    std::vector<SyntheticRun> tstr_train;  // synthetic set x model seed
    std::vector<double> trtr_evaluate;     // one per model seed
    std::vector<SyntheticRun> trts_evaluate;
    /// |mean of paired differences|; the interval is mirrored with the sign.
    ConfidenceInterval delta_tstr;
    ConfidenceInterval delta_trts;
    std::vector<std::string> failures;
};

struct UtilityResult {
    UtilityReport report;
    /// Real-trained models of the evaluation arm (trained on the holdout), in model-seed order.
    std::vector<GruClassifier> real_models;
    /// Statistics used to standardize every classifier input (from the training split).
    NormStats norm;
};

/// Set s is drawn with RngStream(seed).child("synthetic", s).
std::vector<Cohort> draw_synthetic_sets(const SyntheticSource& source, const Cohort& reference, int n, std::uint64_t seed);

/// Both arms over the same synthetic sets; model seeds are shared between
/// real and synthetic arms so identical training data gives identical models.
UtilityResult utility_eval(const SyntheticSource& source, const CohortSplits& raw_splits, const EvalProtocol& protocol,
                           std::uint64_t seed);
UtilityResult training_utility(const SyntheticSource& source, const CohortSplits& raw_splits,
                               const EvalProtocol& protocol, std::uint64_t seed);
UtilityResult evaluation_utility(const SyntheticSource& source, const CohortSplits& raw_splits,
                                 const EvalProtocol& protocol, std::uint64_t seed);

/// Mean of (reference[run.model] - run.auroc) with a t interval, reported as a magnitude.
ConfidenceInterval paired_gap(std::span<const double> reference, std::span<const SyntheticRun> runs);

// ---------------------------------------------------------------------------
// Subgroups

struct SubgroupEntry {
    int key = 0;
    std::string label;
    std::size_t n_group = 0;
    std::size_t n_large = 0;
    std::size_t n_small = 0;
    std::size_t n_synthetic = 0;
    /// Split seeds whose slices all contained both classes, with the per-seed errors (mean over models).
    std::vector<std::uint64_t> split_seeds;
    std::vector<double> eps_naive_runs;
    std::vector<double> eps_synth_runs;
    ConfidenceInterval eps_naive;
    ConfidenceInterval eps_synth;
    /// eps_synth - eps_naive per seed.
    ConfidenceInterval paired_diff;
    bool skipped = false;
    std::string skip_reason;
};

struct SubgroupTally {
    int wins = 0;
    int losses = 0;
    int ties = 0;
    int skipped = 0;
};

struct SubgroupReport {
    std::string data;
    std::string task;
    std::string source;
    std::uint64_t config_hash = 0;
    std::uint64_t classifier_hash = 0;
    std::uint64_t seed = 0;
    int n_models = 0;
    std::vector<SubgroupEntry> groups;  // always 32
    double mean_eps_naive = 0.0;
    double mean_eps_synth = 0.0;
    /// Wins by comparing interval means.
    SubgroupTally by_mean;
    /// Wins where the paired-difference interval lies entirely below (win) or above (loss) zero.
    SubgroupTally by_paired;
    double win_fraction = 0.0;
    double paired_win_fraction = 0.0;
};

/// Subgroup estimation errors: for each group and split seed, 80/20 split of the
/// group inside `train_raw`, a conditional synthetic slice with the large
/// slice's conditions, and |AUROC(large) - AUROC(small)| versus
/// |AUROC(large) - AUROC(synthetic)| averaged over `models`.
SubgroupReport subgroup_eval(std::span<const GruClassifier> models, const NormStats& norm, const Cohort& train_raw,
                             const SyntheticSource& source, const EvalProtocol& protocol, std::uint64_t seed);

/// Tallies recomputed from entries (used by the report and its self-check).
void tally_subgroups(SubgroupReport& report);

// ---------------------------------------------------------------------------
// Fidelity

struct FidelityReport {
    std::string data;
    std::string source;
    std::uint64_t config_hash = 0;
    std::uint64_t classifier_hash = 0;
    std::uint64_t seed = 0;
    bool mirrored = false;
    std::vector<std::uint64_t> run_seeds;
    std::vector<double> disc_auc;
    ConfidenceInterval ci;
};

FidelityReport fidelity_eval(const Cohort& real, const Cohort& synthetic, const EvalProtocol& protocol,
                             std::uint64_t seed, bool mirror_labels = false);

// ---------------------------------------------------------------------------
// Alignment-weight sweep

struct AlignmentWeights {
    double ae_mmd = 0.0;
    double ae_consistency = 0.0;
    double diff_mmd = 0.0;
    double diff_consistency = 0.0;
    friend bool operator==(const AlignmentWeights&, const AlignmentWeights&) = default;
};

/// The nine sweep configurations: all zero; each weight alone at 0.1;
/// both MMD weights at 0.1; both consistency weights at 0.1; all at 0.1; all at 0.5.
std::vector<AlignmentWeights> default_weight_grid();

GeneratorConfig with_weights(GeneratorConfig base, const AlignmentWeights& w);

struct SweepEntry {
    int index = 0;
    AlignmentWeights weights;
    std::optional<UtilityReport> report;
    std::string error;
};

struct SweepReport {
    std::string data;
    std::string task;
    std::uint64_t config_hash = 0;
    std::uint64_t classifier_hash = 0;
    std::uint64_t seed = 0;
    std::uint64_t generator_seed = 0;
    std::vector<SweepEntry> entries;
    /// Entry indices by ascending delta_trts, then delta_tstr, then index; failures last.
    std::vector<int> ranking;
};

/// One generator per configuration, all with the same generator seed, then
/// both utility arms with the same evaluation seed. Failures are isolated.
SweepReport weight_sweep(const CohortSplits& raw_splits, const GeneratorConfig& base,
                         std::span<const AlignmentWeights> grid, const EvalProtocol& protocol, std::uint64_t seed);

std::vector<int> rank_sweep(const std::vector<SweepEntry>& entries);

// ---------------------------------------------------------------------------
// Reports

inline constexpr int kEvalReportVersion = 1;

std::string hash_hex(std::uint64_t h);

Json to_json(const ConfidenceInterval& ci);
Json to_json(const UtilityReport& r);
Json to_json(const SubgroupReport& r);
Json to_json(const FidelityReport& r);
Json to_json(const SweepReport& r);

/// Versioned envelope: kind, hashes, seed, body and the reference values.
Json make_eval_report(const std::string& kind, const Json& body);

/// Reference magnitudes kept as annotations; never compared against.
Json reference_values();

/// Recomputes every aggregate from the stored raw values. Returns the list
/// of inconsistencies (empty when the report is self-consistent).
std::vector<std::string> verify_report(const Json& report);

/// Flat CSV rows mirroring the population table (utility) and the subgroup table.
std::string utility_csv(std::span<const Json> reports);
std::string subgroup_csv(std::span<const Json> reports);

/// Human-readable tables.
std::string render_report(const Json& report);

}  // namespace tadiff
