#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptmix/tensor.hpp"

namespace promptmix {

// Incremental SHA-256 (OpenSSL) producing lowercase hex digests.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::byte> bytes);
  Sha256& update(std::string_view text);
  Sha256& update(std::span<const double> values);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
// Throws FormatError naming `what` on malformed text.
double parse_double(std::string_view text, std::string_view what);
long long parse_integer(std::string_view text, std::string_view what);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

// Checkpoint container shared by every persisted artifact.
//
// Layout, all integers little-endian:
//   magic "PMXCNTR1"
//   u32 len + kind
//   u32 count, then count x (u32 len + key, u32 len + value)   header
//   u32 count, then count x (u32 len + name, u32 rank, rank x u64 dim,
//                            prod(dim) x f64)                   arrays
//   32 bytes SHA-256 of everything above
struct Container {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> header;
  std::vector<NamedArray> arrays;

  void set(std::string key, std::string value);
  // Throws FormatError when the key is absent.
  const std::string& get(std::string_view key) const;
  bool has(std::string_view key) const;
  const NamedArray& array(std::string_view name) const;
};

std::vector<std::byte> encode_container(const Container& container);
Container decode_container(std::span<const std::byte> bytes);

void write_container(const Container& container, const std::filesystem::path& path);
// Throws FormatError (with byte offset) on corrupt input, and
// FormatError if the kind differs from expected_kind when one is given.
Container read_container(const std::filesystem::path& path, std::string_view expected_kind = {});

// Writes bytes to a sibling temporary file and renames it into place.
void write_file_atomically(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text_atomically(const std::filesystem::path& path, std::string_view text);

}  // namespace promptmix
