#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nn/tensor.hpp"

namespace ply::nn {

// Single-file tensor archive:
//   8-byte magic "PLYTNSR1" | u64 manifest length | manifest (UTF-8 JSON)
//   | zero padding to a 64-byte boundary | blob.
// Every tensor is row-major little-endian float32, 64-byte aligned within
// the blob; the manifest records name -> {shape, offset} plus free-form
// metadata and an FNV-1a content hash of the blob.
class Archive {
 public:
  void put(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;

  std::string& metadata() { return metadata_json_; }
  const std::string& metadata() const { return metadata_json_; }

  // Hex FNV-1a64 of the serialized blob (tensors in name order).
  std::string content_hash() const;

  int64_t total_params() const;

  void save(const std::string& path) const;
  static Archive load(const std::string& path);

 private:
  std::map<std::string, Tensor> tensors_;
  std::string metadata_json_ = "{}";
};

}  // namespace ply::nn
