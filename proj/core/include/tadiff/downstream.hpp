#pragma once

#include "tadiff/data.hpp"
#include "tadiff/nn.hpp"
#include "tadiff/numerics.hpp"

#include <span>
#include <vector>

namespace tadiff {

/// Training protocol of the fixed downstream predictor. Defaults are the
/// protocol values: Adam, lr 5e-4, batch 64, at most 50 epochs, best
/// validation-AUROC checkpoint.
struct ClassifierConfig {
    int hidden = 64;
    double lr = 5e-4;
    int batch = 64;
    int max_epochs = 50;
    /// Stop after this many epochs without a new best validation AUROC (0 disables).
    int patience = 0;
    friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

/// Stable hash of the architecture and training protocol.
std::uint64_t classifier_config_hash(const ClassifierConfig& config);

/// One-layer GRU over [values, mask] followed by a sigmoid output on the last hidden state.
struct GruClassifier {
    int features = 0;
    int hidden = 0;
    nn::ParamSet params;

    static GruClassifier init(int features, int hidden, RngStream& rng);
    static GruClassifier zeros(int features, int hidden);
    friend bool operator==(const GruClassifier&, const GruClassifier&) = default;
};

double classifier_forward(const PatientRecord& record, const GruClassifier& model);
/// Probabilities for every record, batched.
std::vector<double> predict(const Cohort& cohort, const GruClassifier& model, std::size_t chunk = 512);

/// Mean BCE of the batch against the given labels; accumulates gradients when `backward`.
double classifier_loss(std::span<const PatientRecord> batch, std::span<const int> labels, GruClassifier& model,
                       bool backward = false);

struct ClassifierEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_auroc = 0.0;
};

struct TrainedClassifier {
    GruClassifier model;
    std::vector<ClassifierEpochLog> log;
    int best_epoch = 0;
    double best_val_auroc = 0.0;
};

/// Labels default to each record's outcome. Throws ErrorKind::UndefinedMetric
/// when the validation labels contain one class.
TrainedClassifier train_classifier(const Cohort& train, const Cohort& val, const ClassifierConfig& config,
                                   std::uint64_t seed);
TrainedClassifier train_classifier(const Cohort& train, std::span<const int> train_labels, const Cohort& val,
                                   std::span<const int> val_labels, const ClassifierConfig& config, std::uint64_t seed);

double evaluate_classifier(const GruClassifier& model, const Cohort& cohort);

struct DiscriminatorResult {
    TrainedClassifier classifier;
    /// AUROC of the discriminator score for "synthetic" on the held-out halves.
    double disc_auc = 0.0;
    std::size_t test_size = 0;
};

/// Real-vs-synthetic discriminator. Each side is halved (seeded); 10% of each
/// training half is held out for checkpoint selection. Labels are real=0,
/// synthetic=1. With `mirror_labels` the first argument is labelled 1 and the
/// second 0, and each side keeps the split stream and position of its label,
/// so train_discriminator(S, R, .., true) trains the same model as
/// train_discriminator(R, S, ..) and reports 1 - DiscAUC. DiscAUC is always
/// the AUROC of the score for label 1 against the second argument's indicator.
DiscriminatorResult train_discriminator(const Cohort& real, const Cohort& synthetic, const ClassifierConfig& config,
                                        std::uint64_t seed, bool mirror_labels = false);

}  // namespace tadiff
