#include "bodycomp/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace bodycomp::model_io {
namespace {

constexpr char kMagic[8] = {'B', 'C', 'M', 'O', 'D', 'E', 'L', '1'};

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::string encode_blob(const std::vector<double>& blob) {
  std::string bytes;
  bytes.reserve(blob.size() * 8);
  for (double d : blob) put_u64_le(bytes, std::bit_cast<std::uint64_t>(d));
  return bytes;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("model file " + path.string() + ": " + what);
}

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t hash = 0xCBF29CE484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    hash ^= data[i];
    hash *= 0x100000001B3ull;
  }
  return hash;
}

void write_container(const std::filesystem::path& path,
                     nlohmann::json manifest, const std::vector<double>& blob) {
  const std::string blob_bytes = encode_blob(blob);
  manifest["blob_doubles"] = blob.size();
  manifest["checksum_fnv1a64"] = hex64(fnv1a64(
      reinterpret_cast<const unsigned char*>(blob_bytes.data()),
      blob_bytes.size()));
  const std::string manifest_bytes = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  std::string len;
  put_u64_le(len, manifest_bytes.size());
  out.write(len.data(), static_cast<std::streamsize>(len.size()));
  out.write(manifest_bytes.data(),
            static_cast<std::streamsize>(manifest_bytes.size()));
  out.write(blob_bytes.data(), static_cast<std::streamsize>(blob_bytes.size()));
  if (!out) fail(path, "write failed");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, 8) != 0) {
    fail(path, "bad magic (not a model file)");
  }
  unsigned char len_bytes[8];
  in.read(reinterpret_cast<char*>(len_bytes), 8);
  if (in.gcount() != 8) fail(path, "truncated manifest length");
  const std::uint64_t manifest_len = get_u64_le(len_bytes);
  if (manifest_len > (1ull << 31)) fail(path, "implausible manifest length");

  std::string manifest_bytes(manifest_len, '\0');
  in.read(manifest_bytes.data(), static_cast<std::streamsize>(manifest_len));
  if (static_cast<std::uint64_t>(in.gcount()) != manifest_len) {
    fail(path, "truncated manifest");
  }
  Container c;
  try {
    c.manifest = nlohmann::json::parse(manifest_bytes);
  } catch (const std::exception& e) {
    fail(path, std::string("manifest parse error: ") + e.what());
  }
  if (!c.manifest.contains("blob_doubles") ||
      !c.manifest.contains("checksum_fnv1a64")) {
    fail(path, "manifest missing blob_doubles/checksum fields");
  }
  const std::uint64_t n_doubles = c.manifest["blob_doubles"].get<std::uint64_t>();
  std::string blob_bytes(n_doubles * 8, '\0');
  in.read(blob_bytes.data(), static_cast<std::streamsize>(blob_bytes.size()));
  if (static_cast<std::uint64_t>(in.gcount()) != blob_bytes.size()) {
    fail(path, "truncated blob: checksum cannot match");
  }
  const std::string expect = c.manifest["checksum_fnv1a64"].get<std::string>();
  const std::string actual = hex64(fnv1a64(
      reinterpret_cast<const unsigned char*>(blob_bytes.data()),
      blob_bytes.size()));
  if (expect != actual) {
    fail(path, "checksum mismatch: manifest says " + expect + ", blob hashes to " +
                   actual);
  }
  c.blob.resize(n_doubles);
  for (std::uint64_t i = 0; i < n_doubles; ++i) {
    c.blob[i] = std::bit_cast<double>(get_u64_le(
        reinterpret_cast<const unsigned char*>(blob_bytes.data()) + i * 8));
  }
  return c;
}

}  // namespace bodycomp::model_io
