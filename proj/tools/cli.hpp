// SPDX-License-Identifier: Apache-2.0
//
// The `opal` command line: synth, train, generate, edit, addpart, eval, serve.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace opal::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Parses a JSON or YAML (.yaml / .yml) document. Throws ConfigError.
nlohmann::json load_document(const std::filesystem::path& path);
/// YAML text to JSON; untagged scalars become bool, integer, float or string.
nlohmann::json yaml_to_json(const std::string& text);

/// Runs one invocation; output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace opal::cli
