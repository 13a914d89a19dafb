#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pare/tensor.h"

namespace pare {

// Named-tensor container used for every checkpoint.
//
// Layout (all integers little-endian):
//   8 bytes   magic "PARETAR1"
//   u64       manifest length M
//   M bytes   UTF-8 JSON manifest {format, version, entries:[{name,dtype,shape}], meta}
//   per entry:
//     u32 name length, name bytes, u8 dtype tag (1 = f64),
//     u32 rank, u64 extents[rank], numel * 8 bytes IEEE-754 payload
//
// The manifest must agree with the entry records on load.
class TensorArchive {
 public:
  void add(std::string name, const Tensor& tensor);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }
  nlohmann::json manifest() const;

  std::string serialize() const;
  static TensorArchive deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  nlohmann::json meta_ = nlohmann::json::object();
};

}  // namespace pare
