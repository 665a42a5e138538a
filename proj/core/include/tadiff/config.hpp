#pragma once

#include "tadiff/checkpoint.hpp"
#include "tadiff/data.hpp"
#include "tadiff/diffusion.hpp"
#include "tadiff/evaluation.hpp"
#include "tadiff/toy.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tadiff {

/// Run configuration: a JSON document with a fixed key set.
///
/// Files and overrides are merged onto the built-in defaults; unknown keys
/// and type changes are rejected with ErrorKind::Config. The hash covers the
/// canonical (sorted-key) dump without the "paths" section.
class RunConfig {
public:
    static RunConfig defaults();
    static RunConfig load(const std::filesystem::path& file);

    /// Deep merge; every key must already exist in the defaults.
    void merge(const Json& patch, const std::string& origin = "config");
    /// "dotted.key=value"; the value is parsed as JSON, falling back to a string.
    void apply_override(const std::string& assignment);

    [[nodiscard]] const Json& values() const noexcept { return values_; }
    [[nodiscard]] std::string canonical() const;
    [[nodiscard]] std::uint64_t hash() const;

    [[nodiscard]] std::string task() const;
    [[nodiscard]] std::string data_label() const;
    [[nodiscard]] ToyPreset toy_preset() const;
    [[nodiscard]] SplitSpec split(std::uint64_t seed) const;
    [[nodiscard]] GeneratorConfig generator() const;
    [[nodiscard]] ClassifierConfig classifier() const;
    [[nodiscard]] EvalProtocol protocol() const;
    [[nodiscard]] std::vector<AlignmentWeights> grid() const;

private:
    Json values_;
};

}  // namespace tadiff
