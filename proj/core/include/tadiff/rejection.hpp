#pragma once

#include "tadiff/data.hpp"
#include "tadiff/error.hpp"

#include <concepts>
#include <string>

namespace tadiff {

/// Thrown when a rejection sampler runs out of attempts.
class RareConditionError : public Error {
public:
    RareConditionError(int tries, int accepted, const std::string& what)
        : Error(ErrorKind::RareCondition, what), tries_(tries), accepted_(accepted) {}

    [[nodiscard]] int tries() const noexcept { return tries_; }
    /// Point estimate accepted / tries (zero on exhaustion).
    [[nodiscard]] double acceptance_rate() const noexcept { return tries_ > 0 ? double(accepted_) / tries_ : 0.0; }
    /// 95% upper bound on the acceptance rate after `tries` failures (rule of three).
    [[nodiscard]] double acceptance_upper_bound() const noexcept { return tries_ > 0 ? 3.0 / tries_ : 1.0; }

private:
    int tries_;
    int accepted_;
};

template <typename Sampler>
concept RecordSampler = requires(Sampler s) {
    { s() } -> std::convertible_to<PatientRecord>;
};

struct RejectionResult {
    PatientRecord record;
    int tries = 0;
};

/// Calls `sample` until it emits a record whose condition (demographics and
/// outcome) equals `target`. Throws RareConditionError after max_tries.
template <RecordSampler Sampler>
RejectionResult rejection_sample_conditional(Sampler&& sample, const Condition& target, int max_tries) {
    if (max_tries < 1) fail(ErrorKind::Input, "rejection_sample_conditional: max_tries must be positive");
    for (int tries = 1; tries <= max_tries; ++tries) {
        PatientRecord r = sample();
        if (r.condition == target) return RejectionResult{std::move(r), tries};
    }
    throw RareConditionError(max_tries, 0,
                             "no sample matched " + target.demo.label() + " outcome=" + std::to_string(target.outcome) +
                                 " in " + std::to_string(max_tries) + " tries (acceptance rate < " +
                                 std::to_string(3.0 / max_tries) + " at 95%)");
}

}  // namespace tadiff
