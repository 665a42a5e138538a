#include "tadiff/downstream.hpp"

#include "tadiff/autoencoder.hpp"
#include "tadiff/error.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace tadiff {

namespace {

struct ClassifierLayers {
    nn::Gru gru;
    nn::Linear head;
};

ClassifierLayers bind(nn::ParamSet& ps) { return {nn::Gru::bind(ps, "clf.gru"), nn::Linear::bind(ps, "clf.head")}; }
ClassifierLayers bind(const nn::ParamSet& ps) { return bind(const_cast<nn::ParamSet&>(ps)); }

constexpr double kBceEps = 1e-7;

}  // namespace

std::uint64_t classifier_config_hash(const ClassifierConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "gru1|hidden=" << c.hidden << "|lr=" << c.lr << "|batch=" << c.batch << "|max_epochs=" << c.max_epochs
       << "|patience=" << c.patience;
    return fnv1a64(os.str());
}

GruClassifier GruClassifier::init(int features, int hidden, RngStream& rng) {
    if (features <= 0 || hidden <= 0) fail(ErrorKind::Config, "classifier dimensions must be positive");
    GruClassifier m;
    m.features = features;
    m.hidden = hidden;
    nn::Gru::create(m.params, "clf.gru", 2 * features, hidden, rng);
    nn::Linear::create(m.params, "clf.head", hidden, 1, rng);
    return m;
}

GruClassifier GruClassifier::zeros(int features, int hidden) {
    RngStream rng(0);
    GruClassifier m = init(features, hidden, rng);
    m.params.assign(Vector::Zero(m.params.total_size()));
    return m;
}

std::vector<double> predict(const Cohort& cohort, const GruClassifier& model, std::size_t chunk) {
    const ClassifierLayers L = bind(model.params);
    std::vector<double> out;
    out.reserve(cohort.size());
    for (std::size_t start = 0; start < cohort.size(); start += chunk) {
        const std::size_t n = std::min(chunk, cohort.size() - start);
        std::span<const PatientRecord> recs(cohort.records.data() + start, n);
        for (const auto& r : recs)
            if (r.values.cols() != model.features)
                fail(ErrorKind::Input, "classifier: record " + std::to_string(r.id) + " has " +
                                           std::to_string(r.values.cols()) + " features, model expects " +
                                           std::to_string(model.features));
        const auto batch = detail::make_batch(recs);
        const auto hs = L.gru.run_eval(batch.inputs);
        const Matrix logits = L.head.eval(hs.back());
        for (Eigen::Index i = 0; i < logits.rows(); ++i) out.push_back(sigmoid(logits(i, 0)));
    }
    return out;
}

double classifier_forward(const PatientRecord& record, const GruClassifier& model) {
    Cohort single;
    single.records.push_back(record);
    return predict(single, model).front();
}

double classifier_loss(std::span<const PatientRecord> batch, std::span<const int> labels, GruClassifier& model,
                       bool backward) {
    if (batch.size() != labels.size()) fail(ErrorKind::Input, "classifier_loss: batch/labels size mismatch");
    const ClassifierLayers L = bind(model.params);
    const auto data = detail::make_batch(batch);
    ad::Tape tape;
    std::vector<ad::Var> xs;
    xs.reserve(data.inputs.size());
    for (const auto& m : data.inputs) xs.push_back(tape.constant(m));
    const auto hs = L.gru.run(tape, xs);
    const ad::Var logits = L.head.forward(tape, hs.back());
    Matrix targets(static_cast<Eigen::Index>(labels.size()), 1);
    for (std::size_t i = 0; i < labels.size(); ++i) targets(static_cast<Eigen::Index>(i), 0) = labels[i] != 0 ? 1.0 : 0.0;
    const ad::Var loss = ad::bce_with_logits(logits, targets, kBceEps);
    if (backward) tape.backward(loss);
    return loss.value()(0, 0);
}

TrainedClassifier train_classifier(const Cohort& train, const Cohort& val, const ClassifierConfig& config,
                                   std::uint64_t seed) {
    const auto ytr = outcomes(train);
    const auto yval = outcomes(val);
    return train_classifier(train, ytr, val, yval, config, seed);
}

TrainedClassifier train_classifier(const Cohort& train, std::span<const int> train_labels, const Cohort& val,
                                   std::span<const int> val_labels, const ClassifierConfig& config, std::uint64_t seed) {
    if (train.empty() || val.empty()) fail(ErrorKind::Input, "train_classifier: empty cohort");
    if (train_labels.size() != train.size() || val_labels.size() != val.size())
        fail(ErrorKind::Input, "train_classifier: label count mismatch");
    if (config.batch < 1 || config.max_epochs < 1 || !(config.lr > 0.0))
        fail(ErrorKind::Config, "train_classifier: invalid protocol");
    const bool has_pos = std::any_of(val_labels.begin(), val_labels.end(), [](int y) { return y != 0; });
    const bool has_neg = std::any_of(val_labels.begin(), val_labels.end(), [](int y) { return y == 0; });
    if (!has_pos || !has_neg) fail(ErrorKind::UndefinedMetric, "train_classifier: validation labels contain a single class");

    const RngStream root(seed);
    RngStream init_rng = root.child("init");
    GruClassifier model = GruClassifier::init(train.meta.features, config.hidden, init_rng);
    nn::Adam adam(model.params, nn::AdamConfig{config.lr});

    TrainedClassifier result;
    result.model = model;
    result.best_val_auroc = -1.0;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<PatientRecord> batch;
    std::vector<int> labels;
    int since_best = 0;
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        RngStream epoch_rng = root.child("epoch", static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);
        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
            batch.clear();
            labels.clear();
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(train.records[order[k]]);
                labels.push_back(train_labels[order[k]]);
            }
            model.params.zero_grad();
            const double loss = classifier_loss(batch, labels, model, true);
            if (!std::isfinite(loss))
                fail(ErrorKind::Numeric, "classifier training: non-finite loss at epoch " + std::to_string(epoch));
            adam.step(model.params);
            loss_sum += loss;
            ++batches;
        }
        const auto scores = predict(val, model);
        const double val_auc = auroc(scores, val_labels);
        result.log.push_back(ClassifierEpochLog{epoch, loss_sum / batches, val_auc});
        if (val_auc > result.best_val_auroc) {
            result.best_val_auroc = val_auc;
            result.best_epoch = epoch;
            result.model = model;
            since_best = 0;
        } else if (config.patience > 0 && ++since_best >= config.patience) {
            break;
        }
    }
    return result;
}

double evaluate_classifier(const GruClassifier& model, const Cohort& cohort) {
    if (cohort.empty()) fail(ErrorKind::UndefinedMetric, "evaluate_classifier: empty cohort");
    const auto scores = predict(cohort, model);
    const auto labels = outcomes(cohort);
    return auroc(scores, labels);
}

namespace {

struct Halves {
    std::vector<std::size_t> fit;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

Halves halve(std::size_t n, RngStream rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    Halves h;
    const std::size_t train_n = n / 2 + n % 2;
    const std::size_t val_n = std::max<std::size_t>(train_n >= 10 ? 1 : 0, train_n / 10);
    for (std::size_t k = 0; k < n; ++k) {
        if (k < val_n)
            h.val.push_back(idx[k]);
        else if (k < train_n)
            h.fit.push_back(idx[k]);
        else
            h.test.push_back(idx[k]);
    }
    return h;
}

}  // namespace

DiscriminatorResult train_discriminator(const Cohort& real, const Cohort& synthetic, const ClassifierConfig& config,
                                        std::uint64_t seed, bool mirror_labels) {
    if (real.size() < 4 || synthetic.size() < 4)
        fail(ErrorKind::Input, "train_discriminator: each side needs at least 4 records");
    if (real.meta.features != synthetic.meta.features || real.meta.steps != synthetic.meta.steps)
        fail(ErrorKind::Input, "train_discriminator: real and synthetic shapes differ");
    if (real.meta.norm.has_value() != synthetic.meta.norm.has_value() ||
        (real.meta.norm && !(*real.meta.norm == *synthetic.meta.norm)))
        fail(ErrorKind::Input, "train_discriminator: real and synthetic cohorts use different normalization");

    // side 0 carries label 0. Streams, positions and normalization follow the
    // side, not the argument. Raw-unit inputs are standardized with side-0 statistics.
    Cohort side0 = mirror_labels ? synthetic : real;
    Cohort side1 = mirror_labels ? real : synthetic;
    if (!real.meta.norm) {
        const NormStats stats = compute_norm_stats(side0);
        side0 = normalize(side0, stats);
        side1 = normalize(side1, stats);
    }
    const RngStream root(seed);
    const Halves h0 = halve(side0.size(), root.child("split.label0"));
    const Halves h1 = halve(side1.size(), root.child("split.label1"));

    auto assemble = [&](const std::vector<std::size_t>& i0, const std::vector<std::size_t>& i1, Cohort& out,
                        std::vector<int>& labels) {
        out = empty_like(side0);
        for (auto i : i0) {
            out.records.push_back(side0.records[i]);
            labels.push_back(0);
        }
        for (auto i : i1) {
            out.records.push_back(side1.records[i]);
            labels.push_back(1);
        }
    };
    Cohort fit, val, test;
    std::vector<int> fit_y, val_y, test_y;
    assemble(h0.fit, h1.fit, fit, fit_y);
    assemble(h0.val, h1.val, val, val_y);
    assemble(h0.test, h1.test, test, test_y);

    DiscriminatorResult result;
    result.classifier = train_classifier(fit, fit_y, val, val_y, config, root.child("model").seed());
    const auto scores = predict(test, result.classifier.model);
    std::vector<int> is_synthetic(test_y);
    if (mirror_labels)
        for (auto& y : is_synthetic) y = 1 - y;
    result.disc_auc = auroc(scores, is_synthetic);
    result.test_size = test.size();
    return result;
}

}  // namespace tadiff
