#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "deepcfl/error.hpp"

namespace deepcfl {

static_assert(std::endian::native == std::endian::little, "archives are written in host (little-endian) order");

/// 64-bit FNV-1a over raw bytes.
inline std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
std::uint64_t fnv1a_values(std::span<const T> v, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a({reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes()}, h);
}

/// Flat, versioned dictionary of named arrays plus a JSON header.
///
/// Layout (little-endian):
///   "DEEPCFL\n"                     8-byte magic
///   u32  version                    kArchiveVersion
///   u64  header length, bytes       UTF-8 JSON (config echo, kind tag, ...)
///   u64  entry count
///   per entry, sorted by name:
///     u8 dtype (0 = f32, 1 = f64, 2 = raw bytes)
///     u32 name length, name bytes
///     u64 element count, payload
///   u64  FNV-1a of every preceding byte
///
/// Entries are kept in sorted maps, so equal contents always serialize to
/// identical bytes.
class Archive {
public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr char kMagic[8] = {'D', 'E', 'E', 'P', 'C', 'F', 'L', '\n'};

  std::string header;
  std::map<std::string, std::vector<float>> f32;
  std::map<std::string, std::vector<double>> f64;
  std::map<std::string, std::string> bytes;

  template <typename T>
  std::map<std::string, std::vector<T>>& arrays() {
    if constexpr (std::is_same_v<T, float>) return f32;
    else return f64;
  }
  template <typename T>
  const std::map<std::string, std::vector<T>>& arrays() const {
    if constexpr (std::is_same_v<T, float>) return f32;
    else return f64;
  }

  template <typename T>
  const std::vector<T>& array(const std::string& name) const {
    const auto& m = arrays<T>();
    auto it = m.find(name);
    if (it == m.end()) throw FormatError("archive entry missing: " + name);
    return it->second;
  }

  const std::string& blob(const std::string& name) const {
    auto it = bytes.find(name);
    if (it == bytes.end()) throw FormatError("archive entry missing: " + name);
    return it->second;
  }

  std::string serialize() const {
    std::string out;
    out.append(kMagic, 8);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(header.size()));
    out += header;
    put(out, static_cast<std::uint64_t>(f32.size() + f64.size() + bytes.size()));
    for (const auto& [name, v] : f32) put_entry(out, 0, name, v.data(), v.size(), sizeof(float));
    for (const auto& [name, v] : f64) put_entry(out, 1, name, v.data(), v.size(), sizeof(double));
    for (const auto& [name, v] : bytes) put_entry(out, 2, name, v.data(), v.size(), 1);
    put(out, fnv1a({reinterpret_cast<const unsigned char*>(out.data()), out.size()}));
    return out;
  }

  static Archive deserialize(const std::string& buf) {
    if (buf.size() < 8 + 4 + 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
      throw FormatError("not a deepcfl archive (bad magic)");
    std::size_t pos = 8;
    const auto version = get<std::uint32_t>(buf, pos);
    if (version != kVersion)
      throw FormatError("unsupported archive version " + std::to_string(version) + " (expected " +
                        std::to_string(kVersion) + ")");
    if (buf.size() < pos + 8) throw FormatError("truncated archive");
    const std::uint64_t stored = read_at<std::uint64_t>(buf, buf.size() - 8);
    const std::uint64_t actual = fnv1a({reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 8});
    if (stored != actual) throw FormatError("corrupt archive: checksum mismatch");

    Archive a;
    const auto hlen = get<std::uint64_t>(buf, pos);
    a.header = take(buf, pos, hlen);
    const auto n = get<std::uint64_t>(buf, pos);
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto dtype = get<std::uint8_t>(buf, pos);
      const auto nlen = get<std::uint32_t>(buf, pos);
      std::string name = take(buf, pos, nlen);
      const auto count = get<std::uint64_t>(buf, pos);
      switch (dtype) {
        case 0: a.f32[name] = take_array<float>(buf, pos, count); break;
        case 1: a.f64[name] = take_array<double>(buf, pos, count); break;
        case 2: a.bytes[name] = take(buf, pos, count); break;
        default: throw FormatError("corrupt archive: unknown dtype");
      }
    }
    if (pos != buf.size() - 8) throw FormatError("corrupt archive: trailing bytes");
    return a;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const std::string s = serialize();
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!out) throw IoError("failed writing " + path);
  }

  static Archive load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

private:
  template <typename U>
  static void put(std::string& out, U v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(U));
  }

  static void put_entry(std::string& out, std::uint8_t dtype, const std::string& name, const void* data,
                        std::size_t count, std::size_t elem) {
    put(out, dtype);
    put(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put(out, static_cast<std::uint64_t>(count));
    out.append(static_cast<const char*>(data), count * elem);
  }

  template <typename U>
  static U read_at(const std::string& buf, std::size_t pos) {
    U v;
    std::memcpy(&v, buf.data() + pos, sizeof(U));
    return v;
  }

  template <typename U>
  static U get(const std::string& buf, std::size_t& pos) {
    if (pos + sizeof(U) > buf.size() - 8) throw FormatError("corrupt archive: truncated");
    U v = read_at<U>(buf, pos);
    pos += sizeof(U);
    return v;
  }

  static std::string take(const std::string& buf, std::size_t& pos, std::uint64_t n) {
    if (n > buf.size() - 8 - pos) throw FormatError("corrupt archive: truncated");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }

  template <typename U>
  static std::vector<U> take_array(const std::string& buf, std::size_t& pos, std::uint64_t count) {
    if (count > (buf.size() - 8 - pos) / sizeof(U)) throw FormatError("corrupt archive: truncated");
    std::vector<U> v(count);
    std::memcpy(v.data(), buf.data() + pos, count * sizeof(U));
    pos += count * sizeof(U);
    return v;
  }
};

}  // namespace deepcfl
