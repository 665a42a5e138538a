#pragma once

#include "tadiff/data.hpp"
#include "tadiff/diffusion.hpp"
#include "tadiff/downstream.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace tadiff {

using Json = nlohmann::json;

Json meta_to_json(const CohortMeta& meta);
CohortMeta meta_from_json(const Json& j);

/// Named tensors as [{"name", "rows", "cols", "data" (row-major)}], in registration order.
Json params_to_json(const nn::ParamSet& params);
/// Overwrites `target` in place; names, order and shapes must match exactly.
void params_from_json(const Json& j, nn::ParamSet& target);

Json vae_to_json(const VaeParams& vae, std::uint64_t config_hash);
VaeParams vae_from_json(const Json& j);

Json bundle_to_json(const GeneratorBundle& bundle);
GeneratorBundle bundle_from_json(const Json& j);

Json classifier_to_json(const GruClassifier& model, const ClassifierConfig& config);
GruClassifier classifier_from_json(const Json& j);

/// Pretty-printed with a trailing newline; output is byte-stable for equal values.
void write_json(const std::filesystem::path& path, const Json& j);
/// ErrorKind::Prerequisite when the file is missing, ErrorKind::Schema when it does not parse.
Json read_json(const std::filesystem::path& path, const std::string& what);

}  // namespace tadiff
