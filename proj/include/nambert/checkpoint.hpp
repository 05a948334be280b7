#pragma once

// NAMB checkpoint files:
//   "NAMB" | u16 LE version | u32 LE header length | header JSON (UTF-8)
//   | raw float32 little-endian arrays in manifest order
// The header holds {"config": ..., "meta": ..., "tensors": [{"name", "shape",
// "offset"}]} with offsets in bytes from the start of the array section.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nambert/model.hpp"

namespace nambert {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct ManifestEntry {
  std::string name;
  nn::Shape shape;
  std::uint64_t offset = 0;
};

struct RawCheckpoint {
  nlohmann::json config;
  nlohmann::json meta;
  std::vector<ManifestEntry> manifest;
  nn::ParamStore<float> tensors;
};

// Called after the header is parsed and before any array is read; throw
// FormatError to reject.
using ManifestValidator = std::function<void(const nlohmann::json& config, const std::vector<ManifestEntry>&)>;

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const nlohmann::json& meta,
                      const nn::ParamStore<float>& tensors);
RawCheckpoint read_checkpoint(const std::filesystem::path& path, const ManifestValidator& validate = {});
// Parses only the header (magic, version, JSON, manifest bounds).
RawCheckpoint read_checkpoint_header(const std::filesystem::path& path);

template <typename T>
struct LoadedModel {
  NamBert<T> model;
  Vocab vocab;
  nlohmann::json meta;
};

// meta carries the vocabulary (as codepoints) and data paths alongside the
// caller's own fields.
template <typename T>
void save_model(const std::filesystem::path& path, const NamBert<T>& model, const Vocab& vocab,
                nlohmann::json meta = nlohmann::json::object());
// Validates magic, version, manifest names and shapes against the stored
// config before reading arrays.
template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& path);

nlohmann::json vocab_to_json(const Vocab& v);
Vocab vocab_from_json(const nlohmann::json& j);

}  // namespace nambert
