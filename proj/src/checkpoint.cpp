// SPDX-License-Identifier: Apache-2.0
#include "loretta/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace loretta {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'L', 'R', 'T', 'T'};
constexpr char kDenseMagic[4] = {'L', 'R', 'D', 'N'};
constexpr std::uint32_t kDenseVersion = 1;

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(U));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U get(const char* what) {
    U v;
    need(sizeof(U), what);
    std::memcpy(&v, in_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void bytes(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    require(remaining() >= n, ErrorCode::CorruptPayload,
            std::string("file ends inside ") + what + " at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t to_u32(std::size_t v, const std::string& what) {
  require(v <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::InvalidArgument,
          what + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::size_t dtype_width(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

std::size_t CheckpointEntry::payload_count() const {
  if (!is_tt()) return shape_numel(dims);
  std::size_t n = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) n += ranks[i] * dims[i] * ranks[i + 1];
  return n;
}

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::size_t Checkpoint::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.values.size();
  return n;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ckpt.dtype));
  w.put<std::uint32_t>(to_u32(ckpt.entries.size(), "tensor count"));
  for (const auto& e : ckpt.entries) {
    require(e.name.size() <= std::numeric_limits<std::uint16_t>::max(), ErrorCode::InvalidArgument,
            "tensor name too long");
    require(!e.dims.empty() && e.dims.size() <= 255, ErrorCode::InvalidArgument,
            e.name + ": order must be in [1, 255]");
    require(!e.is_tt() || e.ranks.size() == e.dims.size() + 1, ErrorCode::InvalidArgument,
            e.name + ": TT entries need d+1 ranks");
    require(e.values.size() == e.payload_count(), ErrorCode::InvalidArgument,
            e.name + ": payload length disagrees with its extents");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dims.size()));
    for (std::size_t k : e.dims) w.put<std::uint32_t>(to_u32(k, e.name + " dim"));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.ranks.size()));
    for (std::size_t r : e.ranks) w.put<std::uint32_t>(to_u32(r, e.name + " rank"));
    if (ckpt.dtype == DType::F32) {
      for (double v : e.values) w.put<float>(static_cast<float>(v));
    } else {
      for (double v : e.values) w.put<double>(v);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  require(bytes.size() >= 4, ErrorCode::BadMagic, "file too short for a checkpoint header");
  r.bytes(magic, 4, "magic");
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorCode::BadMagic, "not an LRTT checkpoint");
  const auto version = r.get<std::uint32_t>("header");
  require(version == kCheckpointVersion, ErrorCode::VersionUnsupported,
          "checkpoint version " + std::to_string(version) + " (supported: " +
              std::to_string(kCheckpointVersion) + ")");
  const auto dtype = r.get<std::uint8_t>("header");
  require(dtype <= 1, ErrorCode::CorruptPayload, "unknown dtype code " + std::to_string(dtype));
  Checkpoint ckpt;
  ckpt.dtype = static_cast<DType>(dtype);
  const auto count = r.get<std::uint32_t>("header");
  const std::size_t width = dtype_width(ckpt.dtype);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = r.get<std::uint16_t>("name length");
    e.name.resize(name_len);
    r.bytes(e.name.data(), name_len, "name");
    const auto d = r.get<std::uint8_t>("order");
    require(d >= 1, ErrorCode::CorruptPayload, e.name + ": order 0");
    for (std::uint8_t j = 0; j < d; ++j) e.dims.push_back(r.get<std::uint32_t>("dims"));
    const auto rank_len = r.get<std::uint8_t>("rank length");
    require(rank_len == 0 || rank_len == d + 1, ErrorCode::CorruptPayload,
            e.name + ": rank list of length " + std::to_string(rank_len) + " for order " +
                std::to_string(d));
    for (std::uint8_t j = 0; j < rank_len; ++j) e.ranks.push_back(r.get<std::uint32_t>("ranks"));
    const std::size_t n = e.payload_count();
    require(n <= r.remaining() / width, ErrorCode::CorruptPayload,
            e.name + ": payload of " + std::to_string(n) + " values is truncated");
    e.values.resize(n);
    if (ckpt.dtype == DType::F32) {
      for (auto& v : e.values) v = static_cast<double>(r.get<float>("payload"));
    } else {
      for (auto& v : e.values) v = r.get<double>("payload");
    }
    ckpt.entries.push_back(std::move(e));
  }
  require(r.remaining() == 0, ErrorCode::CorruptPayload,
          std::to_string(r.remaining()) + " trailing bytes after the last tensor");
  return ckpt;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorCode::IoFailure, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed: " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

template <typename T>
Checkpoint export_trainables(const std::vector<ParamGroup<T>>& groups, DType dtype) {
  Checkpoint ckpt;
  ckpt.dtype = dtype;
  for (const auto& g : groups) {
    if (!g.trainable()) continue;
    CheckpointEntry e;
    e.name = g.name;
    e.dims = g.dims;
    e.ranks = g.ranks;
    for (const auto* p : g.parts) {
      require(p->materialized(), ErrorCode::InvalidConfig, p->name + " is shape-only");
      e.values.insert(e.values.end(), p->value.values().begin(), p->value.values().end());
    }
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

template <typename T>
std::size_t import_trainables(const std::vector<ParamGroup<T>>& groups, const Checkpoint& ckpt) {
  std::size_t restored = 0;
  for (const auto& g : groups) {
    const CheckpointEntry* e = ckpt.find(g.name);
    if (!e) continue;
    require(e->dims == g.dims && e->ranks == g.ranks && e->values.size() == g.numel(),
            ErrorCode::CorruptPayload, g.name + ": stored extents do not match the model");
    std::size_t offset = 0;
    for (auto* p : g.parts) {
      require(p->materialized(), ErrorCode::InvalidConfig, p->name + " is shape-only");
      for (auto& v : p->value.values()) v = static_cast<T>(e->values[offset++]);
    }
    ++restored;
  }
  return restored;
}

CheckpointEntry tt_to_entry(const std::string& base, const TTTensor<double>& tt) {
  CheckpointEntry e;
  e.name = base + "@" + std::to_string(tt.rows()) + "x" + std::to_string(tt.cols());
  e.dims = tt.shape().dims;
  e.ranks = tt.ranks().values;
  for (const auto& f : tt.factors()) e.values.insert(e.values.end(), f.values().begin(), f.values().end());
  return e;
}

TTTensor<double> entry_to_tt(const CheckpointEntry& e) {
  require(e.is_tt(), ErrorCode::CorruptPayload, e.name + " is not a TT entry");
  const auto at = e.name.rfind('@');
  const auto x = e.name.rfind('x');
  require(at != std::string::npos && x != std::string::npos && x > at, ErrorCode::CorruptPayload,
          e.name + ": missing @ROWSxCOLS geometry suffix");
  std::size_t rows = 0, cols = 0;
  try {
    rows = std::stoull(e.name.substr(at + 1, x - at - 1));
    cols = std::stoull(e.name.substr(x + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::CorruptPayload, e.name + ": malformed geometry suffix");
  }
  std::vector<Tensor<double>> factors;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < e.dims.size(); ++i) {
    Shape s{e.ranks[i], e.dims[i], e.ranks[i + 1]};
    const std::size_t n = shape_numel(s);
    factors.emplace_back(s, std::vector<double>(e.values.begin() + static_cast<long>(offset),
                                                e.values.begin() + static_cast<long>(offset + n)));
    offset += n;
  }
  return TTTensor<double>::from_factors(std::move(factors), rows, cols);
}

void save_dense(const std::filesystem::path& path, const Tensor<double>& m) {
  require(m.rank() == 2, ErrorCode::InvalidArgument, "dense file holds a matrix");
  Writer w;
  w.bytes(kDenseMagic, 4);
  w.put<std::uint32_t>(kDenseVersion);
  w.put<std::uint32_t>(to_u32(m.rows(), "rows"));
  w.put<std::uint32_t>(to_u32(m.cols(), "cols"));
  for (double v : m.values()) w.put<double>(v);
  const auto bytes = w.take();
  write_file(path, bytes);
}

Tensor<double> load_dense(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes);
  require(bytes.size() >= 4, ErrorCode::BadMagic, "file too short for a dense header");
  char magic[4];
  r.bytes(magic, 4, "magic");
  require(std::memcmp(magic, kDenseMagic, 4) == 0, ErrorCode::BadMagic, "not an LRDN file");
  const auto version = r.get<std::uint32_t>("header");
  require(version == kDenseVersion, ErrorCode::VersionUnsupported,
          "dense file version " + std::to_string(version));
  const std::size_t rows = r.get<std::uint32_t>("header");
  const std::size_t cols = r.get<std::uint32_t>("header");
  require(r.remaining() == rows * cols * sizeof(double), ErrorCode::CorruptPayload,
          "payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
              std::to_string(rows * cols * sizeof(double)));
  Tensor<double> m = Tensor<double>::matrix(rows, cols);
  for (auto& v : m.values()) v = r.get<double>("payload");
  return m;
}

template Checkpoint export_trainables(const std::vector<ParamGroup<float>>&, DType);
template Checkpoint export_trainables(const std::vector<ParamGroup<double>>&, DType);
template std::size_t import_trainables(const std::vector<ParamGroup<float>>&, const Checkpoint&);
template std::size_t import_trainables(const std::vector<ParamGroup<double>>&, const Checkpoint&);

}  // namespace loretta
