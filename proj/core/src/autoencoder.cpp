#include "tadiff/autoencoder.hpp"

#include "tadiff/error.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace tadiff {

namespace {

struct VaeLayers {
    nn::Gru encoder;
    nn::Linear mu_head;
    nn::Linear logvar_head;
    nn::Gru decoder;
    nn::Linear value_head;
    nn::Linear mask_head;
};

VaeLayers bind(nn::ParamSet& ps) {
    return VaeLayers{nn::Gru::bind(ps, "enc.gru"),   nn::Linear::bind(ps, "enc.mu"),     nn::Linear::bind(ps, "enc.logvar"),
                     nn::Gru::bind(ps, "dec.gru"),   nn::Linear::bind(ps, "dec.values"), nn::Linear::bind(ps, "dec.mask")};
}

VaeLayers bind(const nn::ParamSet& ps) { return bind(const_cast<nn::ParamSet&>(ps)); }

void check_record(const PatientRecord& r, const VaeDims& dims) {
    if (r.values.cols() != dims.features || r.mask.cols() != dims.features || r.values.rows() != r.mask.rows())
        fail(ErrorKind::Input, "VAE: record " + std::to_string(r.id) + " has " + std::to_string(r.values.cols()) +
                                   " features, model expects " + std::to_string(dims.features));
}

}  // namespace

namespace detail {

SequenceBatch make_batch(std::span<const PatientRecord> records) {
    if (records.empty()) fail(ErrorKind::Input, "empty batch");
    const auto T = records.front().values.rows();
    const auto F = records.front().values.cols();
    const auto B = static_cast<Eigen::Index>(records.size());
    SequenceBatch b;
    b.inputs.assign(static_cast<std::size_t>(T), Matrix(B, 2 * F));
    b.values.resize(B, T * F);
    b.mask.resize(B, T * F);
    for (Eigen::Index i = 0; i < B; ++i) {
        const auto& r = records[static_cast<std::size_t>(i)];
        if (r.values.rows() != T || r.values.cols() != F) fail(ErrorKind::Input, "batch records have different shapes");
        for (Eigen::Index t = 0; t < T; ++t) {
            auto& in = b.inputs[static_cast<std::size_t>(t)];
            in.block(i, 0, 1, F) = r.values.row(t);
            in.block(i, F, 1, F) = r.mask.row(t);
            b.values.block(i, t * F, 1, F) = r.values.row(t);
            b.mask.block(i, t * F, 1, F) = r.mask.row(t);
        }
    }
    return b;
}

Matrix flatten_steps(const std::vector<Matrix>& steps) {
    if (steps.empty()) return {};
    const auto B = steps.front().rows();
    const auto w = steps.front().cols();
    Matrix out(B, w * static_cast<Eigen::Index>(steps.size()));
    for (std::size_t t = 0; t < steps.size(); ++t) out.middleCols(static_cast<Eigen::Index>(t) * w, w) = steps[t];
    return out;
}

}  // namespace detail

VaeParams VaeParams::init(const VaeDims& dims, RngStream& rng) {
    if (dims.features <= 0 || dims.latent <= 0 || dims.hidden <= 0) fail(ErrorKind::Config, "VAE dimensions must be positive");
    VaeParams p;
    p.dims = dims;
    nn::Gru::create(p.params, "enc.gru", 2 * dims.features, dims.hidden, rng);
    nn::Linear::create(p.params, "enc.mu", dims.hidden, dims.latent, rng);
    nn::Linear::create(p.params, "enc.logvar", dims.hidden, dims.latent, rng);
    nn::Gru::create(p.params, "dec.gru", dims.latent, dims.hidden, rng);
    nn::Linear::create(p.params, "dec.values", dims.hidden, dims.features, rng);
    nn::Linear::create(p.params, "dec.mask", dims.hidden, dims.features, rng);
    return p;
}

VaeParams VaeParams::zeros(const VaeDims& dims) {
    RngStream rng(0);
    VaeParams p = init(dims, rng);
    p.params.assign(Vector::Zero(p.params.total_size()));
    return p;
}

// ---------------------------------------------------------------------------
// Inference paths (no tape).

std::vector<Posterior> encode_all(const Cohort& cohort, const VaeParams& params, std::size_t chunk) {
    const VaeLayers L = bind(params.params);
    std::vector<Posterior> out;
    out.reserve(cohort.size());
    for (std::size_t start = 0; start < cohort.size(); start += chunk) {
        const std::size_t n = std::min(chunk, cohort.size() - start);
        std::span<const PatientRecord> recs(cohort.records.data() + start, n);
        for (const auto& r : recs) check_record(r, params.dims);
        const auto batch = detail::make_batch(recs);
        const auto hs = L.encoder.run_eval(batch.inputs);
        std::vector<Matrix> mus, lvs;
        for (const auto& h : hs) {
            mus.push_back(L.mu_head.eval(h));
            lvs.push_back(L.logvar_head.eval(h).cwiseMax(kLogvarMin).cwiseMin(kLogvarMax));
        }
        const Eigen::Index T = static_cast<Eigen::Index>(hs.size());
        const Eigen::Index d = params.dims.latent;
        for (std::size_t i = 0; i < n; ++i) {
            Posterior p{Matrix(T, d), Matrix(T, d)};
            for (Eigen::Index t = 0; t < T; ++t) {
                p.mu.row(t) = mus[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(i));
                p.logvar.row(t) = lvs[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(i));
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

Posterior encode(const PatientRecord& record, const VaeParams& params) {
    check_record(record, params.dims);
    Cohort single;
    single.records.push_back(record);
    return encode_all(single, params).front();
}

Matrix reparameterize(const Matrix& mu, const Matrix& logvar, const Matrix& noise) {
    if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || mu.rows() != noise.rows() || mu.cols() != noise.cols())
        fail(ErrorKind::Input, "reparameterize: shape mismatch");
    return mu + ((0.5 * logvar.array()).exp() * noise.array()).matrix();
}

std::vector<Reconstruction> decode_all(std::span<const Matrix> latents, const VaeParams& params, std::size_t chunk) {
    const VaeLayers L = bind(params.params);
    std::vector<Reconstruction> out;
    out.reserve(latents.size());
    const Eigen::Index d = params.dims.latent;
    const Eigen::Index F = params.dims.features;
    for (std::size_t start = 0; start < latents.size(); start += chunk) {
        const std::size_t n = std::min(chunk, latents.size() - start);
        const Eigen::Index T = latents[start].rows();
        std::vector<Matrix> steps(static_cast<std::size_t>(T), Matrix(static_cast<Eigen::Index>(n), d));
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix& z = latents[start + i];
            if (z.rows() != T || z.cols() != d) fail(ErrorKind::Input, "decode: latent shape mismatch");
            for (Eigen::Index t = 0; t < T; ++t) steps[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(i)) = z.row(t);
        }
        const auto hs = L.decoder.run_eval(steps);
        std::vector<Matrix> vals, logits;
        for (const auto& h : hs) {
            vals.push_back(L.value_head.eval(h));
            logits.push_back(L.mask_head.eval(h));
        }
        for (std::size_t i = 0; i < n; ++i) {
            Reconstruction r{Matrix(T, F), Matrix(T, F)};
            for (Eigen::Index t = 0; t < T; ++t) {
                r.values.row(t) = vals[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(i));
                r.mask_logits.row(t) = logits[static_cast<std::size_t>(t)].row(static_cast<Eigen::Index>(i));
            }
            out.push_back(std::move(r));
        }
    }
    return out;
}

Reconstruction decode(const Matrix& z, const VaeParams& params) {
    if (z.cols() != params.dims.latent) fail(ErrorKind::Input, "decode: latent width mismatch");
    const Matrix copy = z;
    return decode_all(std::span<const Matrix>(&copy, 1), params).front();
}

double recon_loss(const PatientRecord& record, const Matrix& values_hat, const Matrix& mask_logits) {
    if (values_hat.rows() != record.values.rows() || values_hat.cols() != record.values.cols() ||
        mask_logits.rows() != record.mask.rows() || mask_logits.cols() != record.mask.cols())
        fail(ErrorKind::Input, "recon_loss: shape mismatch");
    ad::Tape tape;
    const auto mse = ad::mse(tape.constant(values_hat), tape.constant(record.values));
    const auto bce = ad::bce_with_logits(tape.constant(mask_logits), record.mask);
    return mse.value()(0, 0) + bce.value()(0, 0);
}

double kld_loss(const Matrix& mu, const Matrix& logvar) {
    if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols()) fail(ErrorKind::Input, "kld_loss: shape mismatch");
    const auto cell = 0.5 * (logvar.array().exp() + mu.array().square() - 1.0 - logvar.array());
    return cell.sum() / static_cast<double>(mu.size());
}

double consistency_loss(const std::function<Matrix(const Matrix&)>& model, const Matrix& x, double sigma, RngStream& rng) {
    if (sigma < 0.0) fail(ErrorKind::Input, "consistency_loss: sigma must be >= 0");
    const Matrix delta = rng.normal_matrix(x.rows(), x.cols()) * sigma;
    const Matrix a = model(x);
    const Matrix b = model(x + delta);
    if (a.rows() != b.rows() || a.cols() != b.cols()) fail(ErrorKind::Input, "consistency_loss: model output shape changed");
    return (a - b).array().square().sum() / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Training objective on the tape.

namespace {

struct EncodedVars {
    std::vector<ad::Var> mu;
    std::vector<ad::Var> logvar;
};

EncodedVars encode_on_tape(ad::Tape& tape, const VaeLayers& L, const std::vector<Matrix>& inputs) {
    std::vector<ad::Var> xs;
    xs.reserve(inputs.size());
    for (const auto& m : inputs) xs.push_back(tape.constant(m));
    const auto hs = L.encoder.run(tape, xs);
    EncodedVars out;
    for (const auto& h : hs) {
        out.mu.push_back(L.mu_head.forward(tape, h));
        out.logvar.push_back(ad::clamp(L.logvar_head.forward(tape, h), kLogvarMin, kLogvarMax));
    }
    return out;
}

}  // namespace

VaeLossTerms vae_loss_enhanced(std::span<const PatientRecord> batch, VaeParams& params, const VaeWeights& weights,
                               RngStream& rng, bool backward) {
    if (batch.empty()) fail(ErrorKind::Input, "vae_loss_enhanced: empty batch");
    if (weights.mmd > 0.0 && batch.size() < 2) fail(ErrorKind::Input, "vae_loss_enhanced: MMD needs a batch of at least 2");
    for (const auto& r : batch) check_record(r, params.dims);

    const VaeLayers L = bind(params.params);
    const auto data = detail::make_batch(batch);
    const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index T = static_cast<Eigen::Index>(data.inputs.size());
    const Eigen::Index d = params.dims.latent;

    ad::Tape tape;
    const EncodedVars enc = encode_on_tape(tape, L, data.inputs);

    RngStream reparam_rng = rng.child("reparam");
    const Matrix noise = reparam_rng.normal_matrix(B, T * d);
    std::vector<ad::Var> zs;
    for (Eigen::Index t = 0; t < T; ++t) {
        const auto& mu = enc.mu[static_cast<std::size_t>(t)];
        const auto& lv = enc.logvar[static_cast<std::size_t>(t)];
        const ad::Var eps = tape.constant(noise.middleCols(t * d, d));
        zs.push_back(ad::add(mu, ad::mul(ad::exp(ad::scale(lv, 0.5)), eps)));
    }
    const auto gs = L.decoder.run(tape, zs);
    std::vector<ad::Var> vals, logits;
    for (const auto& g : gs) {
        vals.push_back(L.value_head.forward(tape, g));
        logits.push_back(L.mask_head.forward(tape, g));
    }
    const ad::Var mse = ad::mse(ad::concat_cols(vals), tape.constant(data.values));
    const ad::Var bce = ad::bce_with_logits(ad::concat_cols(logits), data.mask);
    const ad::Var recon = ad::add(mse, bce);

    const ad::Var mu_flat = ad::concat_cols(enc.mu);
    const ad::Var lv_flat = ad::concat_cols(enc.logvar);
    // 0.5 * mean(exp(lv) + mu^2 - 1 - lv)
    const ad::Var kld = ad::scale(ad::mean(ad::sub(ad::add(ad::exp(lv_flat), ad::square(mu_flat)), ad::add_scalar(lv_flat, 1.0))), 0.5);

    ad::Var total = ad::add(recon, ad::scale(kld, weights.beta));

    VaeLossTerms terms;
    if (weights.mmd > 0.0) {
        const ad::Var z_flat = ad::concat_cols(zs);
        RngStream prior_rng = rng.child("mmd_prior");
        const Matrix prior = prior_rng.normal_matrix(B, T * d);
        const double bw = weights.mmd_bandwidth > 0.0 ? weights.mmd_bandwidth : median_bandwidth(z_flat.value(), prior);
        const ad::Var mmd = ad::mmd_rbf(z_flat, tape.constant(prior), bw);
        total = ad::add(total, ad::scale(mmd, weights.mmd));
        terms.mmd = mmd.value()(0, 0);
        terms.bandwidth = bw;
    }
    if (weights.consistency > 0.0) {
        RngStream cons_rng = rng.child("consistency");
        const Matrix delta = cons_rng.normal_matrix(B, T * 2 * params.dims.features) * weights.consistency_sigma;
        std::vector<Matrix> perturbed = data.inputs;
        const Eigen::Index w = 2 * params.dims.features;
        for (Eigen::Index t = 0; t < T; ++t) perturbed[static_cast<std::size_t>(t)] += delta.middleCols(t * w, w);
        const EncodedVars enc2 = encode_on_tape(tape, L, perturbed);
        const ad::Var cons = ad::mse(mu_flat, ad::concat_cols(enc2.mu));
        total = ad::add(total, ad::scale(cons, weights.consistency));
        terms.consistency = cons.value()(0, 0);
    }

    terms.total = total.value()(0, 0);
    terms.recon = recon.value()(0, 0);
    terms.mse = mse.value()(0, 0);
    terms.bce = bce.value()(0, 0);
    terms.kld = kld.value()(0, 0);
    if (backward) tape.backward(total);
    return terms;
}

namespace {

void check_finite(const VaeLossTerms& t, int epoch) {
    const std::pair<const char*, double> parts[] = {{"recon", t.recon}, {"kld", t.kld}, {"mmd", t.mmd},
                                                    {"consistency", t.consistency}, {"total", t.total}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v))
            fail(ErrorKind::Numeric, "VAE training: non-finite " + std::string(name) + " loss at epoch " + std::to_string(epoch));
}

}  // namespace

VaeTrainResult train_vae(const Cohort& train, const VaeTrainConfig& config, std::uint64_t seed) {
    if (train.empty()) fail(ErrorKind::Input, "train_vae: empty cohort");
    if (!train.meta.norm) fail(ErrorKind::Input, "train_vae: cohort must be normalized");
    if (config.batch < 2 || config.epochs < 1 || !(config.lr > 0.0)) fail(ErrorKind::Config, "train_vae: invalid schedule");
    VaeDims dims = config.dims;
    dims.features = train.meta.features;

    const RngStream root(seed);
    RngStream init_rng = root.child("init");
    VaeTrainResult result{VaeParams::init(dims, init_rng), {}};
    nn::Adam adam(result.params.params, nn::AdamConfig{config.lr});

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<PatientRecord> batch;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        RngStream epoch_rng = root.child("epoch", static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);
        VaeLossTerms acc;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
            if (end - start < 2 && batches > 0) break;  // a lone trailing record cannot form MMD pairs
            batch.clear();
            for (std::size_t k = start; k < end; ++k) batch.push_back(train.records[order[k]]);
            RngStream step_rng = epoch_rng.child(static_cast<std::uint64_t>(batches));
            result.params.params.zero_grad();
            const auto terms = vae_loss_enhanced(batch, result.params, config.weights, step_rng, true);
            check_finite(terms, epoch);
            adam.step(result.params.params);
            acc.total += terms.total;
            acc.recon += terms.recon;
            acc.mse += terms.mse;
            acc.bce += terms.bce;
            acc.kld += terms.kld;
            acc.mmd += terms.mmd;
            acc.consistency += terms.consistency;
            ++batches;
        }
        if (!result.params.params.all_finite())
            fail(ErrorKind::Numeric, "VAE training: parameters became non-finite at epoch " + std::to_string(epoch));
        const double n = static_cast<double>(batches);
        acc.total /= n;
        acc.recon /= n;
        acc.mse /= n;
        acc.bce /= n;
        acc.kld /= n;
        acc.mmd /= n;
        acc.consistency /= n;
        result.log.push_back(VaeEpochLog{epoch, acc});
    }
    return result;
}

}  // namespace tadiff
