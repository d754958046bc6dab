// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "loretta/parameter.hpp"
#include "loretta/tt.hpp"

namespace loretta {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

std::size_t dtype_width(DType dtype);

/// One stored tensor. A TT entry has ranks r_0..r_d and its payload is the
/// factor payloads back to back; a dense entry has no ranks.
struct CheckpointEntry {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<std::size_t> ranks;
  std::vector<double> values;

  bool is_tt() const noexcept { return !ranks.empty(); }
  /// Number of stored scalars implied by dims and ranks.
  std::size_t payload_count() const;
};

/// File layout, little-endian throughout:
///   "LRTT" | version u32 | dtype u8 | count u32
///   per entry: name_len u16 | name | d u8 | dims u32*d | rank_len u8 |
///              ranks u32*rank_len | payload
struct Checkpoint {
  DType dtype = DType::F32;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
  std::size_t scalar_count() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws BadMagic, VersionUnsupported or CorruptPayload.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Every trainable group, in order.
template <typename T>
Checkpoint export_trainables(const std::vector<ParamGroup<T>>& groups, DType dtype);

/// Writes entries back into groups with the same name. Returns the number
/// of groups restored; shape disagreements throw CorruptPayload.
template <typename T>
std::size_t import_trainables(const std::vector<ParamGroup<T>>& groups, const Checkpoint& ckpt);

/// Standalone TT matrices carry their geometry in the name: "<base>@RxC".
CheckpointEntry tt_to_entry(const std::string& base, const TTTensor<double>& tt);
TTTensor<double> entry_to_tt(const CheckpointEntry& entry);

/// Dense matrix file: "LRDN" | version u32 | rows u32 | cols u32 | f64 payload.
void save_dense(const std::filesystem::path& path, const Tensor<double>& m);
Tensor<double> load_dense(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace loretta
