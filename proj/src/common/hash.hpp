#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace ply {

// FNV-1a, used for content integrity tags in manifests. Not cryptographic.
class Fnv1a64 {
 public:
  Fnv1a64& update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ull;
    }
    return *this;
  }

  uint64_t digest() const { return h_; }

  std::string hex() const {
    static const char* k = "0123456789abcdef";
    std::string s(16, '0');
    uint64_t h = h_;
    for (int i = 15; i >= 0; --i, h >>= 4) s[i] = k[h & 0xf];
    return s;
  }

 private:
  uint64_t h_ = 0xcbf29ce484222325ull;
};

inline uint64_t fnv1a64(const void* data, size_t n) {
  return Fnv1a64().update(data, n).digest();
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string fnv1a64_hex(const void* data, size_t n) {
  return Fnv1a64().update(data, n).hex();
}

inline std::string fnv1a64_hex(const std::string& s) { return fnv1a64_hex(s.data(), s.size()); }

}  // namespace ply
