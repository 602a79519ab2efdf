#pragma once

#include "raad/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace raad {

/// Named tensors in insertion order.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;

  void put(std::string name, Tensor t);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary, little-endian:
///   "RAADCKPT" | u32 version | u64 count |
///   count x ( u64 name_len | name bytes | u64 rank | rank x u64 dim | numel x f64 )
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Reads a whole file; throws raad::Error if it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, then re-reads the file and
/// compares checksums. Throws raad::Error on any mismatch.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace raad
