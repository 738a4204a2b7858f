#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "entrain/condition.hpp"
#include "entrain/error.hpp"
#include "entrain/hashing.hpp"
#include "entrain/io.hpp"

namespace entrain {

std::string_view to_string(ContextCondition c) {
  switch (c) {
    case ContextCondition::kRelated:
      return "related";
    case ContextCondition::kIrrelevant:
      return "irrelevant";
    case ContextCondition::kRandom:
      return "random";
    case ContextCondition::kCounterfactual:
      return "counterfactual";
  }
  return "unknown";
}

std::optional<ContextCondition> parse_condition(std::string_view name) {
  for (auto c : kAllConditions) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error(ExitCode::kGeneric, "SHA-256 digest failed");
  }
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", digest[i]);
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError(fmt::format("write failed for '{}'", path.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError(fmt::format("cannot move into place '{}'", path.string()));
  }
}

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset; ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

}  // namespace entrain
