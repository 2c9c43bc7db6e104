#include "promptmix/container.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "promptmix/errors.hpp"

namespace promptmix {

static_assert(std::endian::native == std::endian::little, "container encoding assumes a little-endian host");

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: OpenSSL digest initialisation failed");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Sha256& Sha256::update(std::span<const std::byte> bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
  return *this;
}

Sha256& Sha256::update(std::string_view text) { return update(std::as_bytes(std::span(text.data(), text.size()))); }

Sha256& Sha256::update(std::span<const double> values) { return update(std::as_bytes(values)); }

std::string Sha256::hex_digest() {
  unsigned char raw[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), raw, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[raw[i] >> 4]);
    out.push_back(kHex[raw[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) { return Sha256().update(text).hex_digest(); }

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

double parse_double(std::string_view text, std::string_view what) {
  double value = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    throw FormatError(std::string(what) + ": '" + std::string(text) + "' is not a number");
  }
  return value;
}

long long parse_integer(std::string_view text, std::string_view what) {
  long long value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    throw FormatError(std::string(what) + ": '" + std::string(text) + "' is not an integer");
  }
  return value;
}

void Container::set(std::string key, std::string value) {
  for (auto& [k, v] : header) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  header.emplace_back(std::move(key), std::move(value));
}

const std::string& Container::get(std::string_view key) const {
  for (const auto& [k, v] : header) {
    if (k == key) return v;
  }
  throw FormatError(kind + " container: missing header field '" + std::string(key) + "'");
}

bool Container::has(std::string_view key) const {
  for (const auto& kv : header) {
    if (kv.first == key) return true;
  }
  return false;
}

const NamedArray& Container::array(std::string_view name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw FormatError(kind + " container: missing array '" + std::string(name) + "'");
}

namespace {

constexpr char kMagic[8] = {'P', 'M', 'X', 'C', 'N', 'T', 'R', '1'};
constexpr std::size_t kDigestBytes = 32;

class Writer {
 public:
  template <typename T>
  void pod(T value) {
    const auto* p = reinterpret_cast<const std::byte*>(&value);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void text(std::string_view s) {
    pod(static_cast<std::uint32_t>(s.size()));
    const auto* p = reinterpret_cast<const std::byte*>(s.data());
    out_.insert(out_.end(), p, p + s.size());
  }
  void raw(std::span<const std::byte> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  std::vector<std::byte>& bytes() { return out_; }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }
  std::string text(const char* what) {
    const auto len = pod<std::uint32_t>(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + offset_), len);
    offset_ += len;
    return s;
  }
  void doubles(std::vector<double>& out, std::size_t count, const char* what) {
    if (count > (bytes_.size() - offset_) / sizeof(double)) fail(what, "truncated");
    out.resize(count);
    std::memcpy(out.data(), bytes_.data() + offset_, count * sizeof(double));
    offset_ += count * sizeof(double);
  }
  std::size_t offset() const { return offset_; }
  [[noreturn]] void fail(const char* what, const char* reason) const {
    throw FormatError(std::string("container parse error at byte offset ") + std::to_string(offset_) + ": " +
                      what + " " + reason);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - offset_) fail(what, "truncated");
  }
  std::span<const std::byte> bytes_;
  std::size_t offset_ = 0;
};

}  // namespace

std::vector<std::byte> encode_container(const Container& container) {
  Writer w;
  w.raw(std::as_bytes(std::span(kMagic)));
  w.text(container.kind);
  w.pod(static_cast<std::uint32_t>(container.header.size()));
  for (const auto& [k, v] : container.header) {
    w.text(k);
    w.text(v);
  }
  w.pod(static_cast<std::uint32_t>(container.arrays.size()));
  for (const auto& a : container.arrays) {
    if (shape_numel(a.shape) != a.values.size()) {
      throw ShapeError("container array '" + a.name + "' has shape " + shape_string(a.shape) + " but " +
                       std::to_string(a.values.size()) + " values");
    }
    w.text(a.name);
    w.pod(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.pod(static_cast<std::uint64_t>(d));
    w.raw(std::as_bytes(std::span(a.values)));
  }
  Sha256 digest;
  digest.update(std::span<const std::byte>(w.bytes()));
  const std::string hex = digest.hex_digest();
  for (std::size_t i = 0; i < kDigestBytes; ++i) {
    w.pod(static_cast<std::uint8_t>(std::stoi(hex.substr(i * 2, 2), nullptr, 16)));
  }
  return std::move(w.bytes());
}

Container decode_container(std::span<const std::byte> bytes) {
  if (bytes.size() < sizeof(kMagic) + kDigestBytes) {
    throw FormatError("container parse error at byte offset 0: file too short (" + std::to_string(bytes.size()) +
                      " bytes)");
  }
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("container parse error at byte offset 0: bad magic");
  }
  const auto body = bytes.first(bytes.size() - kDigestBytes);
  Sha256 digest;
  digest.update(body);
  const std::string expected = digest.hex_digest();
  std::string stored;
  static constexpr char kHex[] = "0123456789abcdef";
  for (auto b : bytes.last(kDigestBytes)) {
    const auto v = static_cast<unsigned>(b);
    stored.push_back(kHex[v >> 4]);
    stored.push_back(kHex[v & 0xF]);
  }
  if (stored != expected) {
    throw FormatError("container parse error at byte offset " + std::to_string(body.size()) +
                      ": checksum mismatch");
  }

  Reader r(body);
  r.pod<std::array<char, 8>>("magic");
  Container c;
  c.kind = r.text("kind");
  const auto header_count = r.pod<std::uint32_t>("header count");
  for (std::uint32_t i = 0; i < header_count; ++i) {
    auto key = r.text("header key");
    auto value = r.text("header value");
    c.header.emplace_back(std::move(key), std::move(value));
  }
  const auto array_count = r.pod<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < array_count; ++i) {
    NamedArray a;
    a.name = r.text("array name");
    const auto rank = r.pod<std::uint32_t>("array rank");
    if (rank > 8) r.fail("array rank", "implausible");
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.pod<std::uint64_t>("array dimension");
      if (dim == 0) r.fail("array dimension", "is zero");
      a.shape.push_back(static_cast<std::size_t>(dim));
    }
    r.doubles(a.values, shape_numel(a.shape), "array values");
    c.arrays.push_back(std::move(a));
  }
  if (r.offset() != body.size()) r.fail("trailer", "unexpected bytes before checksum");
  return c;
}

void write_file_atomically(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomically(const std::filesystem::path& path, std::string_view text) {
  write_file_atomically(path, std::as_bytes(std::span(text.data(), text.size())));
}

void write_container(const Container& container, const std::filesystem::path& path) {
  write_file_atomically(path, encode_container(container));
}

Container read_container(const std::filesystem::path& path, std::string_view expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto c = decode_container(std::as_bytes(std::span(raw)));
  if (!expected_kind.empty() && c.kind != expected_kind) {
    throw FormatError(path.string() + ": expected a '" + std::string(expected_kind) + "' container, found '" +
                      c.kind + "'");
  }
  return c;
}

}  // namespace promptmix
