#include "nnqc/digest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <stdexcept>

#include "nnqc/errors.hpp"

namespace nnqc {

Sha256::Sha256() {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 init failed");
  ctx_ = ctx;
}

Sha256::~Sha256() {
  if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256::update(const void* data, std::size_t n) {
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, n) != 1)
    throw std::runtime_error("sha256 update failed");
}

std::string Sha256::hex() {
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out, &len) != 1)
    throw std::runtime_error("sha256 final failed");
  static const char* digits = "0123456789abcdef";
  std::string hexs(2 * len, '0');
  for (unsigned int i = 0; i < len; ++i) {
    hexs[2 * i] = digits[out[i] >> 4];
    hexs[2 * i + 1] = digits[out[i] & 0xf];
  }
  return hexs;
}

std::string sha256_hex(const void* data, std::size_t n) {
  Sha256 h;
  h.update(data, n);
  return h.hex();
}

std::string sha256_hex(const std::string& s) {
  return sha256_hex(s.data(), s.size());
}

std::string sha256_file_hex(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open file for digest: " + path);
  Sha256 h;
  char buf[1 << 16];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) h.update(buf, n);
  std::fclose(f);
  return h.hex();
}

}  // namespace nnqc
