// SPDX-License-Identifier: Apache-2.0
#include "opal/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "opal/error.hpp"

namespace opal::checkpoint {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic = {'O', 'P', 'A', 'L', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint");
  return v;
}

}  // namespace

fs::path sidecar_path(const fs::path& blob) { return fs::path(blob.string() + ".json"); }

void save(const fs::path& blob, const nn::ParameterSet& params, nlohmann::json sidecar) {
  if (blob.has_parent_path()) fs::create_directories(blob.parent_path());
  {
    std::ofstream out(blob, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + blob.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.items().size()));
    for (const auto& [name, v] : params.items()) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(v.cols()));
      out.write(reinterpret_cast<const char*>(v.value().data()),
                static_cast<std::streamsize>(v.value().size() * sizeof(double)));
    }
  }
  sidecar["format_version"] = kFormatVersion;
  sidecar["parameter_count"] = params.scalar_count();
  std::ofstream meta(sidecar_path(blob));
  if (!meta) throw CheckpointError("cannot write " + sidecar_path(blob).string());
  meta << sidecar.dump(2) << "\n";
}

nlohmann::json read_sidecar(const fs::path& blob) {
  std::ifstream in(sidecar_path(blob));
  if (!in) throw CheckpointError("missing checkpoint sidecar " + sidecar_path(blob).string());
  try {
    auto j = nlohmann::json::parse(in);
    if (j.value("format_version", 0u) != kFormatVersion) {
      throw CheckpointError("unsupported checkpoint format version in " + blob.string());
    }
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad sidecar " + sidecar_path(blob).string() + ": " + e.what());
  }
}

void load_into(const fs::path& blob, nn::ParameterSet& params) {
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + blob.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw CheckpointError(blob.string() + " is not a checkpoint");
  if (get<std::uint32_t>(in) != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint version in " + blob.string());
  }
  const auto count = get<std::uint32_t>(in);
  if (count != params.items().size()) {
    throw CheckpointError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.items().size()));
  }
  for (auto [name, v] : params.items()) {
    const auto len = get<std::uint32_t>(in);
    std::string stored(len, '\0');
    in.read(stored.data(), len);
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    if (stored != name || rows != v.rows() || cols != v.cols()) {
      throw CheckpointError("checkpoint tensor '" + stored + "' does not match model tensor '" +
                            name + "'");
    }
    in.read(reinterpret_cast<char*>(v.mutable_value().data()),
            static_cast<std::streamsize>(v.value().size() * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint " + blob.string());
  }
}

}  // namespace opal::checkpoint
