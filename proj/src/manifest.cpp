// Copyright 2026 The ImplicitCE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "implicitce/manifest.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <stdexcept>

namespace implicitce {

namespace {

std::string digest_to_hex(const unsigned char* digest, unsigned len) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  void update(const void* data, std::size_t len) {
    if (EVP_DigestUpdate(ctx_, data, len) != 1)
      throw std::runtime_error("sha256 update failed");
  }
  std::string finish() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1)
      throw std::runtime_error("sha256 final failed");
    return digest_to_hex(digest, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view data) {
  Sha256 h;
  h.update(data.data(), data.size());
  return h.finish();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.finish();
}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs.emplace_back(path.string(), sha256_file(path));
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json in = nlohmann::json::array();
  for (const auto& [path, digest] : inputs)
    in.push_back({{"path", path}, {"sha256", digest}});
  return nlohmann::json{{"command", command}, {"config", config},
                        {"seed", seed},       {"version", version},
                        {"inputs", in},       {"outputs", outputs},
                        {"wall_seconds", wall_seconds}};
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace implicitce
