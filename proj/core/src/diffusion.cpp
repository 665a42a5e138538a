#include "tadiff/diffusion.hpp"

#include "tadiff/error.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace tadiff {

double NoiseSchedule::posterior_variance(int t) const {
    if (t <= 0) return 0.0;
    return beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
}

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
    if (steps < 1) fail(ErrorKind::Config, "make_schedule: steps must be positive");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        fail(ErrorKind::Config, "make_schedule: need 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    s.beta.resize(static_cast<std::size_t>(steps));
    s.alpha.resize(s.beta.size());
    s.alpha_bar.resize(s.beta.size());
    double prod = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
        s.beta[t] = beta_min + (beta_max - beta_min) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

Matrix q_sample(const Matrix& z0, int t, const Matrix& eps, const NoiseSchedule& schedule) {
    if (t < 0 || t >= schedule.steps())
        fail(ErrorKind::Input, "q_sample: step " + std::to_string(t) + " outside [0, " + std::to_string(schedule.steps()) + ")");
    if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) fail(ErrorKind::Input, "q_sample: shape mismatch");
    const double ab = schedule.alpha_bar[t];
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

// ---------------------------------------------------------------------------

namespace {

struct DenoiserLayers {
    ad::Param* cond_embed;
    nn::Gru forward;
    nn::Gru backward;
    nn::Linear head;
};

DenoiserLayers bind(nn::ParamSet& ps) {
    return DenoiserLayers{&ps.at("den.cond_embed"), nn::Gru::bind(ps, "den.fwd"), nn::Gru::bind(ps, "den.bwd"),
                          nn::Linear::bind(ps, "den.head")};
}

DenoiserLayers bind(const nn::ParamSet& ps) { return bind(const_cast<nn::ParamSet&>(ps)); }

Matrix time_rows(std::span<const int> steps, int width) {
    Matrix m(static_cast<Eigen::Index>(steps.size()), width);
    for (std::size_t i = 0; i < steps.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = time_embedding(steps[i], width);
    return m;
}

}  // namespace

DenoiserParams DenoiserParams::init(const DenoiserDims& dims, RngStream& rng) {
    if (dims.latent <= 0 || dims.hidden <= 0 || dims.time_embed <= 0 || dims.cond_embed <= 0)
        fail(ErrorKind::Config, "denoiser dimensions must be positive");
    DenoiserParams p;
    p.dims = dims;
    p.params.add("den.cond_embed", nn::uniform_init(kConditionCodeWidth, dims.cond_embed, 1.0, rng));
    const int in = dims.latent + dims.time_embed + dims.cond_embed;
    nn::Gru::create(p.params, "den.fwd", in, dims.hidden, rng);
    nn::Gru::create(p.params, "den.bwd", in, dims.hidden, rng);
    nn::Linear::create(p.params, "den.head", 2 * dims.hidden, dims.latent, rng);
    return p;
}

DenoiserParams DenoiserParams::zeros(const DenoiserDims& dims) {
    RngStream rng(0);
    DenoiserParams p = init(dims, rng);
    p.params.assign(Vector::Zero(p.params.total_size()));
    return p;
}

RowVector condition_code(const std::optional<Condition>& cond) {
    RowVector code = RowVector::Zero(kConditionCodeWidth);
    if (cond)
        code.head(kConditionWidth) = one_hot(*cond);
    else
        code[kConditionWidth] = 1.0;
    return code;
}

RowVector time_embedding(int t, int width) {
    RowVector e(width);
    const int half = width / 2;
    for (int i = 0; i < width; ++i) {
        const int k = i % std::max(half, 1);
        const double freq = std::pow(10000.0, -static_cast<double>(k) / std::max(half, 1));
        e[i] = i < half ? std::sin(t * freq) : std::cos(t * freq);
    }
    return e;
}

std::vector<Matrix> denoiser_forward_batch(const std::vector<Matrix>& z_t, std::span<const int> steps, const Matrix& codes,
                                           const DenoiserParams& params) {
    if (z_t.empty()) fail(ErrorKind::Input, "denoiser: empty sequence");
    const Eigen::Index B = z_t.front().rows();
    if (static_cast<Eigen::Index>(steps.size()) != B || codes.rows() != B || codes.cols() != kConditionCodeWidth)
        fail(ErrorKind::Input, "denoiser: batch metadata mismatch");
    const DenoiserLayers L = bind(params.params);
    const Matrix temb = time_rows(steps, params.dims.time_embed);
    const Matrix cemb = codes * L.cond_embed->value;
    const Eigen::Index d = params.dims.latent;
    std::vector<Matrix> inputs;
    inputs.reserve(z_t.size());
    for (const auto& z : z_t) {
        if (z.rows() != B || z.cols() != d) fail(ErrorKind::Input, "denoiser: latent shape mismatch");
        Matrix in(B, d + temb.cols() + cemb.cols());
        in << z, temb, cemb;
        inputs.push_back(std::move(in));
    }
    const auto hf = L.forward.run_eval(inputs);
    const auto hb = L.backward.run_eval(inputs, true);
    std::vector<Matrix> out;
    out.reserve(z_t.size());
    for (std::size_t t = 0; t < z_t.size(); ++t) {
        Matrix h(B, 2 * params.dims.hidden);
        h << hf[t], hb[t];
        out.push_back(L.head.eval(h));
    }
    return out;
}

Matrix denoiser_forward(const Matrix& z_t, int t, const std::optional<Condition>& cond, const DenoiserParams& params) {
    if (z_t.cols() != params.dims.latent) fail(ErrorKind::Input, "denoiser: latent width mismatch");
    std::vector<Matrix> steps;
    for (Eigen::Index s = 0; s < z_t.rows(); ++s) steps.emplace_back(z_t.row(s));
    const int ts[1] = {t};
    const auto out = denoiser_forward_batch(steps, ts, condition_code(cond), params);
    Matrix eps(z_t.rows(), z_t.cols());
    for (Eigen::Index s = 0; s < z_t.rows(); ++s) eps.row(s) = out[static_cast<std::size_t>(s)];
    return eps;
}

Matrix cfg_eps(const Matrix& z_t, int t, const Condition& cond, double w, const DenoiserParams& params) {
    const Matrix conditional = denoiser_forward(z_t, t, cond, params);
    if (w == 0.0) return conditional;
    const Matrix unconditional = denoiser_forward(z_t, t, std::nullopt, params);
    return (1.0 + w) * conditional - w * unconditional;
}

// ---------------------------------------------------------------------------

DiffusionDraws draw_diffusion_noise(std::size_t batch, Eigen::Index seq_len, int latent, const NoiseSchedule& schedule,
                                    double p_uncond, RngStream& rng) {
    DiffusionDraws d;
    RngStream step_rng = rng.child("t");
    RngStream eps_rng = rng.child("eps");
    RngStream drop_rng = rng.child("drop");
    d.steps.resize(batch);
    d.drop.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        d.steps[i] = static_cast<int>(step_rng.uniform_index(static_cast<std::uint64_t>(schedule.steps())));
        d.drop[i] = p_uncond > 0.0 && drop_rng.bernoulli(p_uncond);
    }
    d.eps = eps_rng.normal_matrix(static_cast<Eigen::Index>(batch), seq_len * latent);
    return d;
}

namespace {

std::vector<ad::Var> denoise_on_tape(ad::Tape& tape, const DenoiserLayers& L, const std::vector<Matrix>& z_steps,
                                     const Matrix& temb, ad::Var cemb) {
    std::vector<ad::Var> inputs;
    inputs.reserve(z_steps.size());
    const ad::Var te = tape.constant(temb);
    for (const auto& z : z_steps) {
        const ad::Var parts[3] = {tape.constant(z), te, cemb};
        inputs.push_back(ad::concat_cols(parts));
    }
    const auto hf = L.forward.run(tape, inputs);
    const auto hb = L.backward.run(tape, inputs, true);
    std::vector<ad::Var> out;
    out.reserve(z_steps.size());
    for (std::size_t t = 0; t < z_steps.size(); ++t) {
        const ad::Var h[2] = {hf[t], hb[t]};
        out.push_back(L.head.forward(tape, ad::concat_cols(h)));
    }
    return out;
}

}  // namespace

DiffusionLossTerms diffusion_loss_enhanced(std::span<const Matrix> latents, std::span<const Condition> conds,
                                           DenoiserParams& params, const NoiseSchedule& schedule,
                                           const DiffusionWeights& weights, double p_uncond, RngStream& rng,
                                           bool backward) {
    if (latents.empty()) fail(ErrorKind::Input, "diffusion_loss_enhanced: empty batch");
    if (latents.size() != conds.size()) fail(ErrorKind::Input, "diffusion_loss_enhanced: latents/conditions size mismatch");
    if (weights.mmd > 0.0 && latents.size() < 2)
        fail(ErrorKind::Input, "diffusion_loss_enhanced: MMD needs a batch of at least 2");
    const Eigen::Index B = static_cast<Eigen::Index>(latents.size());
    const Eigen::Index T = latents.front().rows();
    const Eigen::Index d = params.dims.latent;
    for (const auto& z : latents)
        if (z.rows() != T || z.cols() != d) fail(ErrorKind::Input, "diffusion_loss_enhanced: latent shape mismatch");

    const DiffusionDraws draws = draw_diffusion_noise(latents.size(), T, static_cast<int>(d), schedule, p_uncond, rng);

    Matrix z0(B, T * d);
    for (Eigen::Index i = 0; i < B; ++i) z0.row(i) = latents[static_cast<std::size_t>(i)].reshaped<Eigen::RowMajor>().transpose();
    Vector sqrt_ab(B), sqrt_1mab(B);
    Matrix codes(B, kConditionCodeWidth);
    DiffusionLossTerms terms;
    for (Eigen::Index i = 0; i < B; ++i) {
        const double ab = schedule.alpha_bar[static_cast<std::size_t>(draws.steps[static_cast<std::size_t>(i)])];
        sqrt_ab[i] = std::sqrt(ab);
        sqrt_1mab[i] = std::sqrt(1.0 - ab);
        const bool drop = draws.drop[static_cast<std::size_t>(i)];
        terms.null_conditions += drop ? 1 : 0;
        codes.row(i) = condition_code(drop ? std::nullopt : std::optional<Condition>(conds[static_cast<std::size_t>(i)]));
    }
    const Matrix zt = sqrt_ab.asDiagonal() * z0 + sqrt_1mab.asDiagonal() * draws.eps;
    std::vector<Matrix> zt_steps(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) zt_steps[static_cast<std::size_t>(t)] = zt.middleCols(t * d, d);

    const DenoiserLayers L = bind(params.params);
    const Matrix temb = time_rows(draws.steps, params.dims.time_embed);
    ad::Tape tape;
    const ad::Var cemb = ad::matmul(tape.constant(codes), tape.param(*L.cond_embed));
    const ad::Var eps_hat = ad::concat_cols(denoise_on_tape(tape, L, zt_steps, temb, cemb));
    const ad::Var base = ad::mse(eps_hat, tape.constant(draws.eps));
    ad::Var total = base;

    if (weights.mmd > 0.0) {
        // One-step estimate z0_hat = (z_t - sqrt(1 - ab) eps_hat) / sqrt(ab).
        const ad::Var z0_hat = ad::scale_rows(ad::sub(tape.constant(zt), ad::scale_rows(eps_hat, sqrt_1mab)),
                                              sqrt_ab.cwiseInverse());
        const double bw = weights.mmd_bandwidth > 0.0 ? weights.mmd_bandwidth : median_bandwidth(z0_hat.value(), z0);
        const ad::Var mmd = ad::mmd_rbf(z0_hat, tape.constant(z0), bw);
        total = ad::add(total, ad::scale(mmd, weights.mmd));
        terms.mmd = mmd.value()(0, 0);
        terms.bandwidth = bw;
    }
    if (weights.consistency > 0.0) {
        RngStream cons_rng = rng.child("consistency");
        const Matrix delta = cons_rng.normal_matrix(B, T * d) * weights.consistency_sigma;
        std::vector<Matrix> perturbed(zt_steps.size());
        for (Eigen::Index t = 0; t < T; ++t)
            perturbed[static_cast<std::size_t>(t)] = zt_steps[static_cast<std::size_t>(t)] + delta.middleCols(t * d, d);
        const ad::Var eps_hat2 = ad::concat_cols(denoise_on_tape(tape, L, perturbed, temb, cemb));
        const ad::Var cons = ad::mse(eps_hat, eps_hat2);
        total = ad::add(total, ad::scale(cons, weights.consistency));
        terms.consistency = cons.value()(0, 0);
    }
    terms.base = base.value()(0, 0);
    terms.total = total.value()(0, 0);
    if (backward) tape.backward(total);
    return terms;
}

DiffusionTrainResult train_diffusion(std::span<const Matrix> latents, std::span<const Condition> conds,
                                     const DiffusionTrainConfig& config, std::uint64_t seed) {
    if (latents.empty()) fail(ErrorKind::Input, "train_diffusion: no latents");
    if (latents.size() != conds.size()) fail(ErrorKind::Input, "train_diffusion: latents/conditions size mismatch");
    if (config.batch < 2 || config.epochs < 1 || !(config.lr > 0.0)) fail(ErrorKind::Config, "train_diffusion: invalid schedule");
    if (config.p_uncond < 0.0 || config.p_uncond >= 1.0) fail(ErrorKind::Config, "train_diffusion: p_uncond must be in [0, 1)");
    DenoiserDims dims = config.dims;
    dims.latent = static_cast<int>(latents.front().cols());

    const RngStream root(seed);
    RngStream init_rng = root.child("init");
    DiffusionTrainResult result{DenoiserParams::init(dims, init_rng),
                                make_schedule(config.schedule_steps, config.beta_min, config.beta_max), {}, {}};
    nn::Adam adam(result.params.params, nn::AdamConfig{config.lr});

    std::vector<std::size_t> order(latents.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Matrix> zb;
    std::vector<Condition> cb;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        RngStream epoch_rng = root.child("epoch", static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);
        DiffusionLossTerms acc;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
            if (end - start < 2 && batches > 0) break;
            zb.clear();
            cb.clear();
            for (std::size_t k = start; k < end; ++k) {
                zb.push_back(latents[order[k]]);
                cb.push_back(conds[order[k]]);
            }
            RngStream step_rng = epoch_rng.child(static_cast<std::uint64_t>(batches));
            result.params.params.zero_grad();
            const auto terms = diffusion_loss_enhanced(zb, cb, result.params, result.schedule, config.weights,
                                                       config.p_uncond, step_rng, true);
            if (!std::isfinite(terms.total)) {
                const char* which = !std::isfinite(terms.base) ? "base" : !std::isfinite(terms.mmd) ? "mmd" : "consistency";
                fail(ErrorKind::Numeric, std::string("diffusion training: non-finite ") + which + " loss at epoch " +
                                             std::to_string(epoch));
            }
            adam.step(result.params.params);
            result.step_losses.push_back(terms.total);
            acc.total += terms.total;
            acc.base += terms.base;
            acc.mmd += terms.mmd;
            acc.consistency += terms.consistency;
            acc.null_conditions += terms.null_conditions;
            ++batches;
        }
        if (!result.params.params.all_finite())
            fail(ErrorKind::Numeric, "diffusion training: parameters became non-finite at epoch " + std::to_string(epoch));
        const double n = static_cast<double>(batches);
        acc.total /= n;
        acc.base /= n;
        acc.mmd /= n;
        acc.consistency /= n;
        result.log.push_back(DiffusionEpochLog{epoch, acc});
    }
    return result;
}

// ---------------------------------------------------------------------------

std::vector<Matrix> sample_latents(std::span<const Condition> conds, const GeneratorBundle& bundle, RngStream& rng,
                                   std::size_t chunk) {
    const auto& sched = bundle.schedule;
    const Eigen::Index T = bundle.meta.steps;
    const Eigen::Index d = bundle.denoiser.dims.latent;
    const double w = bundle.guidance;
    std::vector<Matrix> out;
    out.reserve(conds.size());
    for (std::size_t start = 0; start < conds.size(); start += chunk) {
        const std::size_t n = std::min(chunk, conds.size() - start);
        const Eigen::Index B = static_cast<Eigen::Index>(n);
        std::vector<RngStream> streams;
        streams.reserve(n);
        Matrix codes(B, kConditionCodeWidth);
        Matrix null_codes(B, kConditionCodeWidth);
        const RowVector null_code = condition_code(std::nullopt);
        Matrix z(B, T * d);
        for (std::size_t i = 0; i < n; ++i) {
            streams.push_back(rng.child("sample", start + i));
            codes.row(static_cast<Eigen::Index>(i)) = condition_code(conds[start + i]);
            null_codes.row(static_cast<Eigen::Index>(i)) = null_code;
            for (Eigen::Index c = 0; c < T * d; ++c) z(static_cast<Eigen::Index>(i), c) = streams.back().normal();
        }
        std::vector<int> steps(n);
        for (int t = sched.steps() - 1; t >= 0; --t) {
            std::fill(steps.begin(), steps.end(), t);
            std::vector<Matrix> zs(static_cast<std::size_t>(T));
            for (Eigen::Index s = 0; s < T; ++s) zs[static_cast<std::size_t>(s)] = z.middleCols(s * d, d);
            Matrix eps = detail::flatten_steps(denoiser_forward_batch(zs, steps, codes, bundle.denoiser));
            if (w != 0.0) {
                const Matrix eps_null = detail::flatten_steps(denoiser_forward_batch(zs, steps, null_codes, bundle.denoiser));
                eps = (1.0 + w) * eps - w * eps_null;
            }
            const double beta = sched.beta[t];
            const double coef = beta / std::sqrt(1.0 - sched.alpha_bar[t]);
            Matrix mean = (z - coef * eps) / std::sqrt(sched.alpha[t]);
            if (t > 0) {
                const double sd = std::sqrt(sched.posterior_variance(t));
                for (Eigen::Index i = 0; i < B; ++i)
                    for (Eigen::Index c = 0; c < T * d; ++c) mean(i, c) += sd * streams[static_cast<std::size_t>(i)].normal();
            }
            z = std::move(mean);
            if (!z.allFinite()) fail(ErrorKind::Numeric, "sampling: non-finite latent at diffusion step " + std::to_string(t));
        }
        for (Eigen::Index i = 0; i < B; ++i) {
            Matrix zi(T, d);
            for (Eigen::Index s = 0; s < T; ++s) zi.row(s) = z.block(i, s * d, 1, d);
            out.push_back(std::move(zi));
        }
    }
    return out;
}

Matrix sample_latent(const Condition& cond, const GeneratorBundle& bundle, RngStream& rng) {
    return sample_latents(std::span<const Condition>(&cond, 1), bundle, rng).front();
}

Cohort generate(const GeneratorBundle& bundle, std::span<const Condition> conds, RngStream& rng) {
    RngStream sample_rng = rng.child("latents");
    const auto latents = sample_latents(conds, bundle, sample_rng);
    const auto recon = decode_all(latents, bundle.vae);
    Cohort out;
    out.meta = bundle.meta;
    out.meta.norm.reset();
    out.records.reserve(conds.size());
    const int F = bundle.meta.features;
    for (std::size_t i = 0; i < conds.size(); ++i) {
        PatientRecord r;
        r.id = static_cast<std::int64_t>(i);
        r.condition = conds[i];
        r.mask = (recon[i].mask_logits.array() > 0.0).cast<double>().matrix();
        Matrix v = recon[i].values;
        for (int f = 0; f < F; ++f) v.col(f) = v.col(f).array() * bundle.norm.sd[f] + bundle.norm.mean[f];
        r.values = refill(v, r.mask, out.meta.fill_values);
        out.records.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------

GeneratorTrainResult train_generator(const Cohort& train_raw, const GeneratorConfig& config, std::uint64_t seed) {
    if (train_raw.meta.norm) fail(ErrorKind::Input, "train_generator: expects a raw-unit cohort");
    const Cohort train = normalize(train_raw);
    auto vae = train_vae(train, config.vae, RngStream(seed).child("vae").seed());
    auto result = train_generator_phase2(train_raw, std::move(vae.params), config, seed);
    result.vae_log = std::move(vae.log);
    return result;
}

GeneratorTrainResult train_generator_phase2(const Cohort& train_raw, VaeParams vae, const GeneratorConfig& config,
                                            std::uint64_t seed) {
    if (train_raw.meta.norm) fail(ErrorKind::Input, "train_generator: expects a raw-unit cohort");
    const Cohort train = normalize(train_raw);
    if (vae.dims.features != train.meta.features) fail(ErrorKind::Input, "train_generator: VAE feature count mismatch");
    const auto posts = encode_all(train, vae);
    std::vector<Matrix> latents;
    latents.reserve(posts.size());
    for (const auto& p : posts) latents.push_back(p.mu);
    const auto conds = conditions(train);
    auto diff = train_diffusion(latents, conds, config.diffusion, RngStream(seed).child("diffusion").seed());

    GeneratorTrainResult result;
    result.bundle.vae = std::move(vae);
    result.bundle.denoiser = std::move(diff.params);
    result.bundle.schedule = std::move(diff.schedule);
    result.bundle.guidance = config.guidance;
    result.bundle.meta = train_raw.meta;
    result.bundle.norm = *train.meta.norm;
    result.bundle.config_hash = config.config_hash;
    result.diffusion_log = std::move(diff.log);
    return result;
}

}  // namespace tadiff
