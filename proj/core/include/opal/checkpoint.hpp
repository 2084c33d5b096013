// SPDX-License-Identifier: Apache-2.0
//
// Versioned weight blobs with a JSON sidecar (<path>.json) describing the
// model kind, layer dimensions and the schema the weights were trained on.
#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "opal/nn.hpp"

namespace opal::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

std::filesystem::path sidecar_path(const std::filesystem::path& blob);

/// `sidecar` gains "format_version" and "parameter_count".
void save(const std::filesystem::path& blob, const nn::ParameterSet& params,
          nlohmann::json sidecar);
nlohmann::json read_sidecar(const std::filesystem::path& blob);
/// Names and shapes must match `params` exactly.
void load_into(const std::filesystem::path& blob, nn::ParameterSet& params);

}  // namespace opal::checkpoint
