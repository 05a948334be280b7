#include "nambert/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace nambert {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'N', 'A', 'M', 'B'};

struct Header {
  nlohmann::json config;
  nlohmann::json meta;
  std::vector<ManifestEntry> manifest;
  std::uint64_t data_start = 0;
  std::uint64_t data_bytes = 0;
  std::uint64_t file_size = 0;
};

Header parse_header(std::ifstream& in, const std::filesystem::path& path) {
  Header h;
  in.seekg(0, std::ios::end);
  h.file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  char magic[4];
  std::uint16_t version = 0;
  std::uint32_t header_len = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path.string() + ": bad magic (expected NAMB)");
  }
  if (!in.read(reinterpret_cast<char*>(&version), 2)) throw FormatError(path.string() + ": truncated header");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (!in.read(reinterpret_cast<char*>(&header_len), 4)) throw FormatError(path.string() + ": truncated header");
  if (10ull + header_len > h.file_size) throw FormatError(path.string() + ": truncated header JSON");
  std::string text(header_len, '\0');
  in.read(text.data(), header_len);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    h.config = j.at("config");
    h.meta = j.value("meta", nlohmann::json::object());
    for (const auto& t : j.at("tensors")) {
      ManifestEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<nn::Shape>();
      e.offset = t.at("offset").get<std::uint64_t>();
      h.manifest.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }
  h.data_start = 10ull + header_len;
  std::uint64_t expected = 0;
  for (const auto& e : h.manifest) {
    if (e.offset != expected) {
      throw FormatError(path.string() + ": manifest offset of '" + e.name + "' is " + std::to_string(e.offset) +
                        ", expected " + std::to_string(expected) + " (offsets must be contiguous and monotone)");
    }
    expected += nn::shape_numel(e.shape) * sizeof(float);
  }
  h.data_bytes = expected;
  return h;
}

// after validation, so a wrong manifest is reported as such and not as a short file
void check_size(const Header& h, const std::filesystem::path& path) {
  if (h.data_start + h.data_bytes > h.file_size) {
    throw FormatError(path.string() + ": truncated, arrays need " + std::to_string(h.data_bytes) + " bytes");
  }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const nlohmann::json& meta,
                      const nn::ParamStore<float>& tensors) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& p = tensors[i];
    manifest.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size() * sizeof(float);
  }
  const nlohmann::json header = {{"config", config}, {"meta", meta}, {"tensors", manifest}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto header_len = static_cast<std::uint32_t>(text.size());
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), 2);
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& v = tensors[i].value;
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

RawCheckpoint read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Header h = parse_header(in, path);
  check_size(h, path);
  RawCheckpoint raw;
  raw.config = std::move(h.config);
  raw.meta = std::move(h.meta);
  raw.manifest = std::move(h.manifest);
  return raw;
}

RawCheckpoint read_checkpoint(const std::filesystem::path& path, const ManifestValidator& validate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Header h = parse_header(in, path);
  if (validate) validate(h.config, h.manifest);
  check_size(h, path);
  RawCheckpoint raw;
  in.seekg(static_cast<std::streamoff>(h.data_start));
  for (const auto& e : h.manifest) {
    nn::Tensor<float> t(e.shape);
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw FormatError(path.string() + ": truncated while reading '" + e.name + "'");
    }
    raw.tensors.add(e.name, std::move(t));
  }
  raw.config = std::move(h.config);
  raw.meta = std::move(h.meta);
  raw.manifest = std::move(h.manifest);
  return raw;
}

nlohmann::json vocab_to_json(const Vocab& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (char32_t c : v.chars()) arr.push_back(static_cast<std::uint32_t>(c));
  return arr;
}

Vocab vocab_from_json(const nlohmann::json& j) {
  std::vector<char32_t> chars;
  for (const auto& c : j) chars.push_back(static_cast<char32_t>(c.get<std::uint32_t>()));
  return Vocab(chars);
}

template <typename T>
void save_model(const std::filesystem::path& path, const NamBert<T>& model, const Vocab& vocab, nlohmann::json meta) {
  if (vocab.size() != model.config().vocab_size) {
    throw ConfigError("vocab size " + std::to_string(vocab.size()) + " does not match model vocab_size " +
                      std::to_string(model.config().vocab_size));
  }
  meta["vocab"] = vocab_to_json(vocab);
  nn::ParamStore<float> f32;
  const auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) f32.add(ps[i].name, ps[i].value.template cast<float>());
  write_checkpoint(path, to_json(model.config()), meta, f32);
}

template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& path) {
  ModelConfig cfg;
  auto validate = [&](const nlohmann::json& config, const std::vector<ManifestEntry>& manifest) {
    try {
      cfg = model_config_from_json(config);
      cfg.validate();
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ": invalid model config: " + e.what());
    }
    const auto layout = NamBert<T>::parameter_layout(cfg);
    if (layout.size() != manifest.size()) {
      throw FormatError(path.string() + ": manifest lists " + std::to_string(manifest.size()) +
                        " tensors, config expects " + std::to_string(layout.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (layout[i].first != manifest[i].name || layout[i].second != manifest[i].shape) {
        throw FormatError(path.string() + ": manifest entry '" + manifest[i].name + "' " +
                          nn::shape_str(manifest[i].shape) + " disagrees with config ('" + layout[i].first + "' " +
                          nn::shape_str(layout[i].second) + ")");
      }
    }
  };
  RawCheckpoint raw = read_checkpoint(path, validate);
  nn::ParamStore<T> params;
  for (std::size_t i = 0; i < raw.tensors.size(); ++i) {
    params.add(raw.tensors[i].name, raw.tensors[i].value.template cast<T>());
  }
  Vocab vocab = raw.meta.contains("vocab") ? vocab_from_json(raw.meta.at("vocab")) : Vocab{};
  if (vocab.size() != cfg.vocab_size) {
    throw FormatError(path.string() + ": stored vocabulary has " + std::to_string(vocab.size()) +
                      " ids, config says " + std::to_string(cfg.vocab_size));
  }
  return LoadedModel<T>{NamBert<T>(cfg, std::move(params)), std::move(vocab), std::move(raw.meta)};
}

template void save_model<float>(const std::filesystem::path&, const NamBert<float>&, const Vocab&, nlohmann::json);
template void save_model<double>(const std::filesystem::path&, const NamBert<double>&, const Vocab&, nlohmann::json);
template LoadedModel<float> load_model<float>(const std::filesystem::path&);
template LoadedModel<double> load_model<double>(const std::filesystem::path&);

}  // namespace nambert
