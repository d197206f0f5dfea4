#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nnqc {

// Incremental SHA-256 (OpenSSL EVP behind the scenes).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n);
  void update(const std::string& s) { update(s.data(), s.size()); }
  template <typename T>
  void update_vector(const std::vector<T>& v) {
    update(v.data(), v.size() * sizeof(T));
  }

  // Hex digest; the object must not be updated afterwards.
  std::string hex();

 private:
  void* ctx_ = nullptr;
};

std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace nnqc
