/*
 * Copyright 2026 The fedmvc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedmvc/autoencoder.hpp"
#include "fedmvc/errors.hpp"
#include "fedmvc/numerics.hpp"
#include "fedmvc/protocol.hpp"

// Binary layout shared by wire messages and checkpoints. All integers and
// doubles are little-endian; matrices are row-major.
//
//   "FDMV" | version:u8 | tag:u8 | body
//
//   Upload     view:u32 n:u64 d:u64 k:u64 ids:i64[n] z:f64[n*d] q:f64[n*k]
//   Broadcast  m:u32 dims:u64[m] k:u64 n:u64 ids:i64[n] c:f64[k*sum(dims)] p:f64[n*k]
//   Checkpoint for encoder then decoder:
//                layers:u32 {in:u64 out:u64 act:u8}[layers]
//              then every layer's weight:f64[in*out] and bias:f64[out]

namespace fedmvc {

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr char kWireMagic[4] = {'F', 'D', 'M', 'V'};

enum class MessageTag : std::uint8_t { kUpload = 1, kBroadcast = 2, kCheckpoint = 3 };

using Message = std::variant<ClientUpload, Broadcast>;
using Bytes = std::vector<std::byte>;

class ByteWriter {
 public:
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    out_.insert(out_.end(), p, p + n);
  }

  template <typename T>
  void scalar(T value) {
    static_assert(std::is_arithmetic_v<T>);
    if constexpr (std::endian::native == std::endian::big) value = byteswap_value(value);
    raw(&value, sizeof(T));
  }

  void matrix_payload(const Matrix& m) {
    if constexpr (std::endian::native == std::endian::little) {
      raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    } else {
      for (Index i = 0; i < m.size(); ++i) scalar(m.data()[i]);
    }
  }

  void header(MessageTag tag) {
    raw(kWireMagic, 4);
    scalar(kWireVersion);
    scalar(static_cast<std::uint8_t>(tag));
  }

  Bytes take() { return std::move(out_); }

 private:
  template <typename T>
  static T byteswap_value(T v) {
    std::byte b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }

  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw DeserializeError(std::string("truncated buffer reading ") + what, pos_);
    }
  }

  template <typename T>
  T scalar(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::byte b[sizeof(T)];
      std::memcpy(b, &value, sizeof(T));
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
      std::memcpy(&value, b, sizeof(T));
    }
    pos_ += sizeof(T);
    return value;
  }

  // Dimension read with an upper bound derived from the bytes left, so a
  // corrupt header cannot trigger a huge allocation.
  std::uint64_t dim(const char* what, std::uint64_t bytes_per_unit = 1) {
    const std::size_t at = pos_;
    const auto v = scalar<std::uint64_t>(what);
    if (bytes_per_unit > 0 && v > remaining() / bytes_per_unit + 1) {
      throw DeserializeError(std::string("implausible ") + what, at);
    }
    return v;
  }

  Matrix matrix_payload(Index rows, Index cols, const char* what) {
    const std::size_t max_count = remaining() / sizeof(double);
    if (rows < 0 || cols < 0 ||
        (rows > 0 && static_cast<std::size_t>(cols) > max_count / static_cast<std::size_t>(rows))) {
      throw DeserializeError(std::string("truncated buffer reading ") + what, pos_);
    }
    const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    Matrix m(rows, cols);
    if constexpr (std::endian::native == std::endian::little) {
      if (count > 0) std::memcpy(m.data(), in_.data() + pos_, count * sizeof(double));
      pos_ += count * sizeof(double);
    } else {
      for (std::size_t i = 0; i < count; ++i) m.data()[i] = scalar<double>(what);
    }
    return m;
  }

  MessageTag header() {
    if (remaining() < 4 || std::memcmp(in_.data() + pos_, kWireMagic, 4) != 0) {
      throw DeserializeError("bad magic", pos_);
    }
    pos_ += 4;
    const std::size_t version_at = pos_;
    const auto version = scalar<std::uint8_t>("version");
    if (version != kWireVersion) {
      throw DeserializeError("unsupported version " + std::to_string(version), version_at);
    }
    const std::size_t tag_at = pos_;
    const auto tag = scalar<std::uint8_t>("tag");
    if (tag < 1 || tag > 3) throw DeserializeError("unknown message tag " + std::to_string(tag), tag_at);
    return static_cast<MessageTag>(tag);
  }

  void finish() const {
    if (remaining() != 0) throw DeserializeError("trailing bytes", pos_);
  }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

namespace detail {

inline void write_upload(ByteWriter& w, const ClientUpload& up) {
  w.header(MessageTag::kUpload);
  w.scalar(static_cast<std::uint32_t>(up.view));
  w.scalar(static_cast<std::uint64_t>(up.ids.size()));
  w.scalar(static_cast<std::uint64_t>(up.z.cols()));
  w.scalar(static_cast<std::uint64_t>(up.q.cols()));
  for (SampleId id : up.ids) w.scalar(static_cast<std::int64_t>(id));
  w.matrix_payload(up.z);
  w.matrix_payload(up.q);
}

inline void write_broadcast(ByteWriter& w, const Broadcast& b) {
  w.header(MessageTag::kBroadcast);
  const auto& dims = b.prototypes.view_dims;
  w.scalar(static_cast<std::uint32_t>(dims.size()));
  for (Index d : dims) w.scalar(static_cast<std::uint64_t>(d));
  w.scalar(static_cast<std::uint64_t>(b.prototypes.c.rows()));
  w.scalar(static_cast<std::uint64_t>(b.ids.size()));
  for (SampleId id : b.ids) w.scalar(static_cast<std::int64_t>(id));
  w.matrix_payload(b.prototypes.c);
  w.matrix_payload(b.p);
}

inline ClientUpload read_upload(ByteReader& r) {
  ClientUpload up;
  up.view = static_cast<int>(r.scalar<std::uint32_t>("view"));
  const auto n = static_cast<Index>(r.dim("sample count", 8));
  const auto d = static_cast<Index>(r.dim("embedding width", 0));
  const auto k = static_cast<Index>(r.dim("cluster count", 0));
  r.need(static_cast<std::size_t>(n) * 8, "sample ids");
  up.ids.resize(static_cast<std::size_t>(n));
  for (auto& id : up.ids) id = r.scalar<std::int64_t>("sample id");
  up.z = r.matrix_payload(n, d, "embeddings");
  up.q = r.matrix_payload(n, k, "assignments");
  return up;
}

inline Broadcast read_broadcast(ByteReader& r) {
  Broadcast b;
  const auto m = r.scalar<std::uint32_t>("view count");
  r.need(static_cast<std::size_t>(m) * 8, "view dims");
  Index total = 0;
  for (std::uint32_t v = 0; v < m; ++v) {
    const auto d = static_cast<Index>(r.dim("view dim", 0));
    b.prototypes.view_dims.push_back(d);
    total += d;
  }
  const auto k = static_cast<Index>(r.dim("cluster count", 0));
  const auto n = static_cast<Index>(r.dim("sample count", 8));
  r.need(static_cast<std::size_t>(n) * 8, "sample ids");
  b.ids.resize(static_cast<std::size_t>(n));
  for (auto& id : b.ids) id = r.scalar<std::int64_t>("sample id");
  b.prototypes.c = r.matrix_payload(k, total, "prototypes");
  b.p = r.matrix_payload(n, k, "pseudo-labels");
  return b;
}

inline void write_mlp_header(ByteWriter& w, const MlpParams& mlp) {
  w.scalar(static_cast<std::uint32_t>(mlp.layers.size()));
  for (const auto& layer : mlp.layers) {
    w.scalar(static_cast<std::uint64_t>(layer.weight.rows()));
    w.scalar(static_cast<std::uint64_t>(layer.weight.cols()));
    w.scalar(static_cast<std::uint8_t>(layer.activation));
  }
}

inline void write_mlp_payload(ByteWriter& w, const MlpParams& mlp) {
  for (const auto& layer : mlp.layers) {
    w.matrix_payload(layer.weight);
    w.matrix_payload(layer.bias);
  }
}

inline MlpParams read_mlp_header(ByteReader& r) {
  MlpParams mlp;
  const auto layers = r.scalar<std::uint32_t>("layer count");
  r.need(static_cast<std::size_t>(layers) * 17, "layer dims");
  for (std::uint32_t l = 0; l < layers; ++l) {
    DenseLayer layer;
    const auto in = static_cast<Index>(r.dim("layer input dim", 0));
    const auto out = static_cast<Index>(r.dim("layer output dim", 0));
    const std::size_t act_at = r.offset();
    const auto act = r.scalar<std::uint8_t>("activation");
    if (act > 2) throw DeserializeError("unknown activation " + std::to_string(act), act_at);
    layer.weight.resize(in, out);
    layer.bias.resize(out);
    layer.activation = static_cast<Activation>(act);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

inline void read_mlp_payload(ByteReader& r, MlpParams& mlp) {
  for (auto& layer : mlp.layers) {
    layer.weight = r.matrix_payload(layer.weight.rows(), layer.weight.cols(), "layer weight");
    layer.bias = r.matrix_payload(1, layer.bias.size(), "layer bias");
  }
}

}  // namespace detail

inline Bytes serialize(const Message& msg) {
  ByteWriter w;
  std::visit(
      [&w](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ClientUpload>) {
          if (!m.z.allFinite() || !m.q.allFinite()) throw ContractViolation("serialize: non-finite upload");
          detail::write_upload(w, m);
        } else {
          if (!m.prototypes.c.allFinite() || !m.p.allFinite()) {
            throw ContractViolation("serialize: non-finite broadcast");
          }
          detail::write_broadcast(w, m);
        }
      },
      msg);
  return w.take();
}

inline Message deserialize(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  const MessageTag tag = r.header();
  Message out;
  switch (tag) {
    case MessageTag::kUpload:
      out = detail::read_upload(r);
      break;
    case MessageTag::kBroadcast:
      out = detail::read_broadcast(r);
      break;
    default:
      throw DeserializeError("checkpoint record is not a message", 5);
  }
  r.finish();
  return out;
}

inline Bytes serialize_checkpoint(const Autoencoder& ae) {
  ByteWriter w;
  w.header(MessageTag::kCheckpoint);
  detail::write_mlp_header(w, ae.encoder);
  detail::write_mlp_header(w, ae.decoder);
  detail::write_mlp_payload(w, ae.encoder);
  detail::write_mlp_payload(w, ae.decoder);
  return w.take();
}

inline Autoencoder deserialize_checkpoint(std::span<const std::byte> bytes) {
  ByteReader r(bytes);
  if (r.header() != MessageTag::kCheckpoint) throw DeserializeError("not a checkpoint record", 5);
  Autoencoder ae;
  ae.encoder = detail::read_mlp_header(r);
  ae.decoder = detail::read_mlp_header(r);
  detail::read_mlp_payload(r, ae.encoder);
  detail::read_mlp_payload(r, ae.decoder);
  r.finish();
  try {
    ae.encoder.validate();
    ae.decoder.validate();
  } catch (const ContractViolation& e) {
    throw DeserializeError(std::string("invalid checkpoint: ") + e.what(), 0);
  }
  return ae;
}

inline void save_checkpoint(const Autoencoder& ae, const std::string& path) {
  const Bytes bytes = serialize_checkpoint(ae);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path);
}

inline Autoencoder load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace fedmvc
