// Checkpoint = directory holding
//   weights.bin    named-tensor archive (float64, little-endian)
//   manifest.json  {format_version, config, vocabulary, train_config_digest, epoch, metrics}
//
// weights.bin layout: "BITW" u32 version, u64 count, then per tensor
//   u32 name_len, name bytes, i64 rows, i64 cols, rows*cols f64 (row-major).
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>

#include "bit/harness/config.hpp"
#include "bit/network.hpp"

namespace bit {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError(path + ": truncated archive");
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

}  // namespace detail

template <typename S>
void write_weights(const std::filesystem::path& path, const ad::ParameterStore<S>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write("BITW", 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint64_t>(out, store.parameters().size());
  for (const auto& p : store.parameters()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_le<std::int64_t>(out, p.value.rows());
    detail::write_le<std::int64_t>(out, p.value.cols());
    for (Index i = 0; i < p.value.size(); ++i) detail::write_le<double>(out, static_cast<double>(p.value.data()[i]));
  }
  if (!out) throw CheckpointError("write failed: " + path.string());
}

// Every archive tensor must exist in the store with the same shape and vice versa.
template <typename S>
void read_weights(const std::filesystem::path& path, ad::ParameterStore<S>& store) {
  const std::string ps = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + ps);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BITW", 4) != 0) throw CheckpointError(ps + ": not a weight archive");
  if (detail::read_le<std::uint32_t>(in, ps) != 1) throw CheckpointError(ps + ": unsupported archive version");
  const auto count = detail::read_le<std::uint64_t>(in, ps);
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(in, ps);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rows = detail::read_le<std::int64_t>(in, ps);
    const auto cols = detail::read_le<std::int64_t>(in, ps);
    ad::Parameter<S>* p = store.find(name);
    if (p == nullptr) throw CheckpointError(ps + ": unexpected tensor " + name);
    if (p->value.rows() != rows || p->value.cols() != cols) throw CheckpointError(ps + ": shape mismatch for " + name);
    for (Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = static_cast<S>(detail::read_le<double>(in, ps));
    seen.insert(name);
  }
  if (seen.size() != store.parameters().size()) throw CheckpointError(ps + ": archive is missing tensors");
}

struct CheckpointManifest {
  BitConfig config;
  ActionVocabulary vocab;
  std::string train_config_digest;
  int epoch = 0;
  Json metrics = Json::object();
};

template <typename S>
void save_checkpoint(const std::filesystem::path& dir, const BitNetwork<S>& net, const CheckpointManifest& m) {
  std::filesystem::create_directories(dir);
  write_weights(dir / "weights.bin", net.parameters());
  Json j{{"format_version", kCheckpointVersion},
         {"config", net.config()},
         {"vocabulary", m.vocab.names()},
         {"train_config_digest", m.train_config_digest},
         {"epoch", m.epoch},
         {"metrics", m.metrics}};
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw CheckpointError("cannot write manifest in " + dir.string());
}

template <typename S>
struct LoadedCheckpoint {
  std::unique_ptr<BitNetwork<S>> network;
  CheckpointManifest manifest;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& dir) {
  const Json j = read_json_file((dir / "manifest.json").string());
  if (j.value("format_version", 0) != kCheckpointVersion) throw CheckpointError(dir.string() + ": unsupported format version");
  LoadedCheckpoint<S> c;
  c.manifest.config = j.at("config").get<BitConfig>();
  c.manifest.vocab = ActionVocabulary(j.at("vocabulary").get<std::vector<std::string>>());
  c.manifest.train_config_digest = j.value("train_config_digest", "");
  c.manifest.epoch = j.value("epoch", 0);
  c.manifest.metrics = j.value("metrics", Json::object());
  if (c.manifest.vocab.size() != c.manifest.config.num_classes) throw CheckpointError("manifest vocabulary/config mismatch");
  c.network = std::make_unique<BitNetwork<S>>(c.manifest.config, 0);
  read_weights(dir / "weights.bin", c.network->parameters());
  return c;
}

}  // namespace bit
