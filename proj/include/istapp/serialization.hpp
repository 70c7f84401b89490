#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <utility>
#include <vector>

#include "istapp/error.hpp"

/// Shared plumbing for the on-disk formats: key=value text, little-endian
/// binary fields and atomic file replacement.
namespace istapp::serial {

static_assert(std::numeric_limits<double>::is_iec559, "f64 payloads assume IEEE-754 doubles");

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_bool(std::string_view s) {
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  return std::nullopt;
}

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Ordered key=value record. Lines starting with '#' and blank lines are
/// ignored; inline '#' after a value starts a comment as well.
class KeyValues {
 public:
  /// `base` is the byte offset of `text` inside its file, used in errors.
  static KeyValues parse(std::string_view text, std::size_t base = 0) {
    KeyValues kv;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (!line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw FormatError("expected key=value, got '" + std::string(line) + "'", base + pos);
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw FormatError("empty key", base + pos);
        if (kv.find(key)) throw FormatError("duplicate key '" + key + "'", base + pos);
        kv.entries_.emplace_back(key, std::string(trim(line.substr(eq + 1))));
        kv.offsets_.push_back(base + pos);
      }
      if (end == text.size()) break;
      pos = end + 1;
    }
    kv.base_ = base;
    return kv;
  }

  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = std::move(value);
        return;
      }
    entries_.emplace_back(std::move(key), std::move(value));
    offsets_.push_back(base_);
  }

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return &v;
    return nullptr;
  }

  const std::string& get(const std::string& key) const {
    if (const auto* v = find(key)) return *v;
    throw FormatError("missing key '" + key + "'", base_);
  }

  double get_double(const std::string& key) const { return convert(key, parse_double(get(key)), "a number"); }
  std::uint64_t get_uint(const std::string& key) const { return convert(key, parse_uint(get(key)), "an unsigned integer"); }
  bool get_bool(const std::string& key) const { return convert(key, parse_bool(get(key)), "a boolean"); }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    if (get(key).empty()) return out;
    for (auto part : split(get(key), ',')) out.push_back(convert(key, parse_double(part), "a number list"));
    return out;
  }

  std::vector<std::uint64_t> get_uints(const std::string& key) const {
    std::vector<std::uint64_t> out;
    if (get(key).empty()) return out;
    for (auto part : split(get(key), ',')) out.push_back(convert(key, parse_uint(part), "an integer list"));
    return out;
  }

  std::size_t offset_of(const std::string& key) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].first == key) return offsets_[i];
    return base_;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  template <class T>
  T convert(const std::string& key, std::optional<T> v, const char* what) const {
    if (!v) throw FormatError("value of '" + key + "' is not " + what + ": '" + get(key) + "'", offset_of(key));
    return *v;
  }

  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<std::size_t> offsets_;
  std::size_t base_ = 0;
};

template <class T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f64(std::vector<unsigned char>& out, std::span<const double> values) {
  for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      throw FormatError("truncated " + what + ": need " + std::to_string(n) + " bytes, have " +
                            std::to_string(remaining()),
                        bytes_.size());
    }
  }

  std::string_view text(std::size_t n, const std::string& what) {
    need(n, what);
    std::string_view s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  void f64(std::span<double> out, const std::string& what) {
    if (out.size() > remaining() / 8) need(8 * out.size(), what);
    for (double& d : out) d = std::bit_cast<double>(u64(what));
  }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot replace " + path.string());
  }
}

/// magic | u64 header length | header text | payload.
inline std::vector<unsigned char> frame(std::string_view magic, const std::string& header) {
  std::vector<unsigned char> out(magic.begin(), magic.end());
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  return out;
}

/// Checks the magic and returns the parsed header; the reader is left at the payload.
inline KeyValues unframe(Reader& in, std::string_view magic, const char* kind) {
  const auto got = in.text(std::min(magic.size(), in.remaining()), std::string(kind) + " magic");
  if (got != magic) throw FormatError(std::string("bad magic, not a ") + kind + " file", 0);
  const std::uint64_t len = in.u64(std::string(kind) + " header length");
  if (len > in.remaining()) in.need(static_cast<std::size_t>(len), std::string(kind) + " header");
  const std::size_t base = in.pos();
  return KeyValues::parse(in.text(static_cast<std::size_t>(len), std::string(kind) + " header"), base);
}

}  // namespace istapp::serial
