#pragma once

// Binary checkpoint: header, JSON metadata, named tensors, crc32 trailer.
//
//   "FEEDRECK" | u32 version | u8 scalar bytes | u64 meta length | meta JSON
//   | u32 tensor count | { u32 name length | name | u32 rows | u32 cols | data }
//   | u32 crc32 of everything before it
//
// Integers and scalars are stored in host byte order (little-endian hosts).

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "json.hpp"

#include "feedrec/config.hpp"
#include "feedrec/errors.hpp"
#include "feedrec/model.hpp"

namespace feedrec {

inline constexpr char kCheckpointMagic[8] = {'F', 'E', 'E', 'D', 'R', 'E', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  TrainConfig config;
  int epoch = 0;
  std::string rng_state;
};

template <typename T>
struct Checkpoint {
  CheckpointMeta meta;
  FeedRecModel<T> model;
};

namespace detail {

class ByteWriter {
 public:
  template <typename V>
  void pod(const V& v) {
    static_assert(std::is_trivially_copyable_v<V>);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<char> bytes;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename V>
  V pod() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw IntegrityError("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta,
                     const FeedRecModel<T>& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint8_t>(sizeof(T)));
  const std::string meta_json =
      json{{"config", meta.config}, {"epoch", meta.epoch}, {"rng_state", meta.rng_state}}.dump();
  w.pod(static_cast<std::uint64_t>(meta_json.size()));
  w.raw(meta_json.data(), meta_json.size());
  const auto& params = model.store.all();
  w.pod(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.pod(static_cast<std::uint32_t>(p->name.size()));
    w.raw(p->name.data(), p->name.size());
    w.pod(static_cast<std::uint32_t>(p->value.rows()));
    w.pod(static_cast<std::uint32_t>(p->value.cols()));
    w.raw(p->value.data(), sizeof(T) * static_cast<std::size_t>(p->value.size()));
  }
  w.pod(detail::crc_of(w.bytes.data(), w.bytes.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(w.bytes.data(), static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kCheckpointMagic + 4 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IntegrityError("not a checkpoint file: " + path.string());
  }
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, sizeof stored_crc);
  detail::ByteReader r(bytes, body);
  r.take(sizeof kCheckpointMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                         std::to_string(kCheckpointVersion) + ")");
  }
  if (detail::crc_of(bytes.data(), body) != stored_crc) {
    throw IntegrityError("checkpoint checksum mismatch: " + path.string());
  }
  if (r.pod<std::uint8_t>() != sizeof(T)) throw IntegrityError("checkpoint scalar type mismatch");
  const auto meta_len = r.pod<std::uint64_t>();
  const char* meta_ptr = r.take(meta_len);
  CheckpointMeta meta;
  try {
    const json j = json::parse(meta_ptr, meta_ptr + meta_len);
    meta.config = train_from_json(j.at("config"), "config");
    meta.epoch = j.at("epoch").get<int>();
    meta.rng_state = j.at("rng_state").get<std::string>();
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata unreadable: ") + e.what());
  }
  FeedRecModel<T> model(meta.config.model, 0);
  const auto count = r.pod<std::uint32_t>();
  if (count != model.store.all().size()) throw IntegrityError("checkpoint tensor count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>();
    const std::string name(r.take(name_len), name_len);
    if (!model.store.contains(name)) throw IntegrityError("unexpected tensor " + name);
    Parameter<T>& p = model.store.get(name);
    const auto rows = r.pod<std::uint32_t>();
    const auto cols = r.pod<std::uint32_t>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw IntegrityError("tensor " + name + " has the wrong shape");
    }
    std::memcpy(p.value.data(), r.take(sizeof(T) * rows * cols), sizeof(T) * rows * cols);
  }
  if (!r.done()) throw IntegrityError("trailing bytes in checkpoint");
  return {std::move(meta), std::move(model)};
}

}  // namespace feedrec
