#pragma once

#include "tadiff/autoencoder.hpp"
#include "tadiff/data.hpp"
#include "tadiff/nn.hpp"
#include "tadiff/numerics.hpp"

#include <optional>
#include <span>
#include <vector>

namespace tadiff {

/// Linear DDPM variance schedule. Index t runs over [0, steps).
struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    [[nodiscard]] int steps() const noexcept { return static_cast<int>(beta.size()); }
    /// Posterior variance beta_tilde[t] = beta[t] (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]); zero at t = 0.
    [[nodiscard]] double posterior_variance(int t) const;
    friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

/// z_t = sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) eps
Matrix q_sample(const Matrix& z0, int t, const Matrix& eps, const NoiseSchedule& schedule);

struct DenoiserDims {
    int latent = 8;
    int hidden = 64;
    int time_embed = 16;
    int cond_embed = 16;
    friend bool operator==(const DenoiserDims&, const DenoiserDims&) = default;
};

/// Width of the condition code fed to the embedding: the one-hot condition plus a null-token slot.
inline constexpr int kConditionCodeWidth = kConditionWidth + 1;

/// Bidirectional GRU noise predictor. Every step receives
/// [z_t(step), sinusoidal(t), onehot(cond) W_cond]; the output head maps the
/// concatenated forward/backward states to a d-dimensional noise estimate.
struct DenoiserParams {
    DenoiserDims dims;
    nn::ParamSet params;

    static DenoiserParams init(const DenoiserDims& dims, RngStream& rng);
    static DenoiserParams zeros(const DenoiserDims& dims);
    friend bool operator==(const DenoiserParams&, const DenoiserParams&) = default;
};

/// Code row for a condition, or the null token when `cond` is empty.
RowVector condition_code(const std::optional<Condition>& cond);
/// Sinusoidal embedding of the diffusion step.
RowVector time_embedding(int t, int width);

Matrix denoiser_forward(const Matrix& z_t, int t, const std::optional<Condition>& cond, const DenoiserParams& params);

/// Batched prediction. z_t holds one B x d matrix per sequence step; steps[i]
/// and codes.row(i) belong to sample i. Returns time-major predictions.
std::vector<Matrix> denoiser_forward_batch(const std::vector<Matrix>& z_t, std::span<const int> steps, const Matrix& codes,
                                           const DenoiserParams& params);

/// Classifier-free guidance: (1 + w) eps(cond) - w eps(null). w = 0 returns eps(cond) unchanged.
Matrix cfg_eps(const Matrix& z_t, int t, const Condition& cond, double w, const DenoiserParams& params);

struct DiffusionWeights {
    double mmd = 0.0;
    double consistency = 0.0;
    double consistency_sigma = 0.1;
    double mmd_bandwidth = 0.0;  // 0 selects the median heuristic
};

struct DiffusionLossTerms {
    double total = 0.0;
    double base = 0.0;
    double mmd = 0.0;
    double consistency = 0.0;
    double bandwidth = 0.0;
    int null_conditions = 0;
};

/// Fixed per-sample draws for one loss evaluation.
struct DiffusionDraws {
    std::vector<int> steps;
    Matrix eps;         // B x (T*d)
    std::vector<bool> drop;
};

DiffusionDraws draw_diffusion_noise(std::size_t batch, Eigen::Index seq_len, int latent, const NoiseSchedule& schedule,
                                    double p_uncond, RngStream& rng);

/// Enhanced denoising objective:
///   mean |eps - eps_hat|^2 + lambda_mmd MMD(z0_hat, z0) + lambda_cons MSE(eps_hat(z_t), eps_hat(z_t + delta))
/// where z0_hat is the one-step reconstruction from eps_hat. Conditions are
/// replaced by the null token with probability p_uncond.
DiffusionLossTerms diffusion_loss_enhanced(std::span<const Matrix> latents, std::span<const Condition> conds,
                                           DenoiserParams& params, const NoiseSchedule& schedule,
                                           const DiffusionWeights& weights, double p_uncond, RngStream& rng,
                                           bool backward = false);

struct DiffusionTrainConfig {
    DenoiserDims dims;
    DiffusionWeights weights;
    int schedule_steps = 100;
    // The 1000-step range [1e-4, 0.02] scaled by 10 for 100 steps, so alpha_bar[last] < 0.01.
    double beta_min = 1e-3;
    double beta_max = 0.2;
    double p_uncond = 0.1;
    double lr = 1e-3;
    int epochs = 150;
    int batch = 64;
};

struct DiffusionEpochLog {
    int epoch = 0;
    DiffusionLossTerms mean;
};

struct DiffusionTrainResult {
    DenoiserParams params;
    NoiseSchedule schedule;
    std::vector<DiffusionEpochLog> log;
    /// Loss of every optimizer step, in order.
    std::vector<double> step_losses;
};

DiffusionTrainResult train_diffusion(std::span<const Matrix> latents, std::span<const Condition> conds,
                                     const DiffusionTrainConfig& config, std::uint64_t seed);

/// Everything needed to sample synthetic records conditionally.
struct GeneratorBundle {
    static constexpr int kFormatVersion = 1;

    VaeParams vae;
    DenoiserParams denoiser;
    NoiseSchedule schedule;
    double guidance = 0.0;
    /// Raw-unit metadata of the training cohort (feature names, fill values).
    CohortMeta meta;
    NormStats norm;
    std::uint64_t config_hash = 0;

    friend bool operator==(const GeneratorBundle&, const GeneratorBundle&) = default;
};

/// Ancestral DDPM sampling for a batch of conditions. Each sample draws its
/// noise from rng.child("sample", i). Throws ErrorKind::Numeric with the step
/// index on non-finite intermediates.
std::vector<Matrix> sample_latents(std::span<const Condition> conds, const GeneratorBundle& bundle, RngStream& rng,
                                   std::size_t chunk = 512);
Matrix sample_latent(const Condition& cond, const GeneratorBundle& bundle, RngStream& rng);

/// Synthetic cohort with exactly the given conditions, in raw units.
Cohort generate(const GeneratorBundle& bundle, std::span<const Condition> conds, RngStream& rng);

struct GeneratorConfig {
    VaeTrainConfig vae;
    DiffusionTrainConfig diffusion;
    /// Guidance weight w in (1 + w) eps_cond - w eps_null. Any w > 0 sharpens the
    /// outcome condition beyond the training data and widens the TRTS gap, so the
    /// default samples from the plain conditional model.
    double guidance = 0.0;
    std::uint64_t config_hash = 0;
};

struct GeneratorTrainResult {
    GeneratorBundle bundle;
    std::vector<VaeEpochLog> vae_log;
    std::vector<DiffusionEpochLog> diffusion_log;
};

/// Two-phase training on a raw-unit cohort: normalize, fit the VAE, encode
/// posterior means, fit the denoiser on them.
GeneratorTrainResult train_generator(const Cohort& train_raw, const GeneratorConfig& config, std::uint64_t seed);

/// Builds the bundle's diffusion phase from an already-trained VAE.
GeneratorTrainResult train_generator_phase2(const Cohort& train_raw, VaeParams vae, const GeneratorConfig& config,
                                            std::uint64_t seed);

}  // namespace tadiff
