#pragma once

#include "tadiff/autodiff.hpp"
#include "tadiff/data.hpp"
#include "tadiff/nn.hpp"
#include "tadiff/numerics.hpp"

#include <functional>
#include <span>
#include <vector>

namespace tadiff {

struct VaeDims {
    int features = 4;  // continuous channels; the encoder sees 2F inputs (values + mask)
    int latent = 8;
    int hidden = 64;
    friend bool operator==(const VaeDims&, const VaeDims&) = default;
};

/// GRU encoder -> per-step (mu, logvar); GRU decoder -> continuous head and mask-logit head.
struct VaeParams {
    VaeDims dims;
    nn::ParamSet params;

    static VaeParams init(const VaeDims& dims, RngStream& rng);
    /// All weights and biases zero.
    static VaeParams zeros(const VaeDims& dims);
    friend bool operator==(const VaeParams&, const VaeParams&) = default;
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

struct Posterior {
    Matrix mu;      // T x d
    Matrix logvar;  // T x d, clamped to [kLogvarMin, kLogvarMax]
};

struct Reconstruction {
    Matrix values;       // T x F
    Matrix mask_logits;  // T x F
};

Posterior encode(const PatientRecord& record, const VaeParams& params);
/// Batched encode over a cohort; one Posterior per record.
std::vector<Posterior> encode_all(const Cohort& cohort, const VaeParams& params, std::size_t chunk = 256);

/// z = mu + exp(logvar / 2) * noise
Matrix reparameterize(const Matrix& mu, const Matrix& logvar, const Matrix& noise);

Reconstruction decode(const Matrix& z, const VaeParams& params);
/// Batched decode of many T x d latents.
std::vector<Reconstruction> decode_all(std::span<const Matrix> latents, const VaeParams& params, std::size_t chunk = 256);

/// MSE over continuous cells plus mean BCE over mask cells (probabilities
/// clamped to [1e-6, 1-1e-6]).
double recon_loss(const PatientRecord& record, const Matrix& values_hat, const Matrix& mask_logits);

/// mean over cells of 0.5 (exp(logvar) + mu^2 - 1 - logvar)
double kld_loss(const Matrix& mu, const Matrix& logvar);

/// MSE(f(x), f(x + delta)) with one draw delta ~ N(0, sigma^2 I).
double consistency_loss(const std::function<Matrix(const Matrix&)>& model, const Matrix& x, double sigma, RngStream& rng);

struct VaeWeights {
    double beta = 0.1;
    double mmd = 0.0;
    double consistency = 0.0;
    double consistency_sigma = 0.1;
    /// RBF bandwidth for the latent MMD term; 0 selects the per-batch median heuristic.
    double mmd_bandwidth = 0.0;
};

struct VaeLossTerms {
    double total = 0.0;
    double recon = 0.0;
    double mse = 0.0;
    double bce = 0.0;
    double kld = 0.0;
    double mmd = 0.0;
    double consistency = 0.0;
    double bandwidth = 0.0;
};

/// Enhanced VAE objective over a batch:
///   recon + beta * kld + lambda_mmd * MMD(posterior z, prior draws) + lambda_cons * consistency(encoder mean)
/// Terms with zero weight are neither evaluated nor added. When `backward`
/// is set the gradient of `total` is accumulated into params.params[*].grad.
VaeLossTerms vae_loss_enhanced(std::span<const PatientRecord> batch, VaeParams& params, const VaeWeights& weights,
                               RngStream& rng, bool backward = false);

struct VaeTrainConfig {
    VaeDims dims;
    VaeWeights weights;
    double lr = 1e-3;
    int epochs = 100;
    int batch = 64;
};

struct VaeEpochLog {
    int epoch = 0;
    VaeLossTerms mean;
};

struct VaeTrainResult {
    VaeParams params;
    std::vector<VaeEpochLog> log;
};

/// Adam training on a normalized cohort. Throws ErrorKind::Numeric naming
/// the first non-finite loss term.
VaeTrainResult train_vae(const Cohort& train, const VaeTrainConfig& config, std::uint64_t seed);

namespace detail {

/// Time-major inputs for a batch: one B x width matrix per step.
struct SequenceBatch {
    std::vector<Matrix> inputs;  // B x 2F: values then mask
    Matrix values;               // B x (T*F), column t*F + f
    Matrix mask;                 // B x (T*F)
};
SequenceBatch make_batch(std::span<const PatientRecord> records);

/// Flattens time-major B x w matrices into B x (T*w) with column t*w + j.
Matrix flatten_steps(const std::vector<Matrix>& steps);

}  // namespace detail

}  // namespace tadiff
