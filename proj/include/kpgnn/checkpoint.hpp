#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kpgnn/tensor.hpp"

namespace kpgnn {

/// Versioned container of named tensors and named byte blobs.
///
/// Layout (all integers little-endian):
///   "KPGNCKPT" | u32 version
///   u64 tensor_count | { u32 name_len | name | u64 rows | u64 cols | f64[rows*cols] }*
///   u64 blob_count   | { u32 key_len  | key  | u64 len  | bytes }*
/// Entries are written in name order, so equal contents give equal bytes.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, tensor::Matrix> tensors;
  std::map<std::string, std::string> blobs;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const tensor::Matrix& tensor(const std::string& name) const;
  const std::string& blob(const std::string& key) const;

  bool operator==(const Checkpoint&) const = default;
};

/// Stores parameters under `prefix + name` and Adam state under
/// `prefix + "adam/..."`.
void store_parameters(Checkpoint& ckpt, const tensor::ParameterSet& params,
                      const std::string& prefix = "param/");
void store_adam(Checkpoint& ckpt, const tensor::AdamState& state,
                const std::string& prefix = "adam/");
tensor::ParameterSet load_parameters(const Checkpoint& ckpt,
                                     const std::string& prefix = "param/");
tensor::AdamState load_adam(const Checkpoint& ckpt, const std::string& prefix = "adam/");

/// FNV-1a digest of the serialized parameter tensors only.
std::uint64_t parameter_hash(const tensor::ParameterSet& params);

}  // namespace kpgnn
