#include "cli_common.hpp"

#include <cstdio>
#include <iostream>

#include <openssl/evp.h>

#include "polyseq/dataio.hpp"

#ifndef POLYSEQ_VERSION
#define POLYSEQ_VERSION "0.0.0"
#endif

namespace polyseq::cli {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

nlohmann::json make_meta(std::uint64_t seed, const nlohmann::json& inputs) {
  return {{"tool", "polyseq"}, {"version", POLYSEQ_VERSION}, {"seed", seed}, {"inputs", inputs}};
}

void emit(const std::string& text, const std::optional<std::filesystem::path>& out) {
  if (out) {
    dataio::write_file(*out, text);
  } else {
    std::cout << text << std::flush;
  }
}

}  // namespace polyseq::cli
