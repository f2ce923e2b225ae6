#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "romda/error.hpp"

namespace romda {

/// RDX1 array container.
///
/// Layout:
///   [0, 4)        magic "RDX1"
///   [4, 12)       header length H, uint64 little-endian
///   [12, 12 + H)  header, UTF-8 JSON:
///                 {"arrays":[{"dtype":"f64le","name":..,"offset":..,"shape":[..]}, ..],
///                  "attrs":{name: int | float | string}, "format":"RDX1"}
///   [12 + H, ..)  data region; each array occupies 8 * prod(shape) bytes at
///                 its offset (relative to the data region), IEEE-754 binary64
///                 little-endian, row-major order.
struct NdArray {
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::uint64_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
  }
};

using Attribute = std::variant<std::int64_t, double, std::string>;

struct Container {
  std::map<std::string, NdArray> arrays;
  std::map<std::string, Attribute> attrs;

  bool has(const std::string& name) const { return arrays.count(name) != 0; }

  const NdArray& array(const std::string& name) const {
    auto it = arrays.find(name);
    require(it != arrays.end(), ErrorCode::ParseError, "container has no array '" + name + "'");
    return it->second;
  }

  void put_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    NdArray a;
    a.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    a.data.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.data.data(), m.rows(),
                                                                                      m.cols()) = m;
    arrays[name] = std::move(a);
  }

  void put_vector(const std::string& name, const Eigen::VectorXd& v) {
    arrays[name] = NdArray{{static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())};
  }

  Eigen::MatrixXd matrix(const std::string& name) const {
    const auto& a = array(name);
    require(a.shape.size() == 2, ErrorCode::ParseError, "array '" + name + "' is not 2-D");
    const auto rows = static_cast<Eigen::Index>(a.shape[0]);
    const auto cols = static_cast<Eigen::Index>(a.shape[1]);
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.data.data(),
                                                                                                 rows, cols);
  }

  Eigen::VectorXd vector(const std::string& name) const {
    const auto& a = array(name);
    require(a.shape.size() == 1, ErrorCode::ParseError, "array '" + name + "' is not 1-D");
    return Eigen::Map<const Eigen::VectorXd>(a.data.data(), static_cast<Eigen::Index>(a.data.size()));
  }

  const Attribute& attr(const std::string& name) const {
    auto it = attrs.find(name);
    require(it != attrs.end(), ErrorCode::ParseError, "container has no attribute '" + name + "'");
    return it->second;
  }

  std::int64_t attr_int(const std::string& name) const {
    const auto& a = attr(name);
    if (const auto* i = std::get_if<std::int64_t>(&a)) return *i;
    if (const auto* d = std::get_if<double>(&a)) return static_cast<std::int64_t>(*d);
    fail(ErrorCode::ParseError, "attribute '" + name + "' is not numeric");
  }

  double attr_double(const std::string& name) const {
    const auto& a = attr(name);
    if (const auto* d = std::get_if<double>(&a)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&a)) return static_cast<double>(*i);
    fail(ErrorCode::ParseError, "attribute '" + name + "' is not numeric");
  }

  std::string attr_string(const std::string& name) const {
    const auto& a = attr(name);
    const auto* s = std::get_if<std::string>(&a);
    require(s != nullptr, ErrorCode::ParseError, "attribute '" + name + "' is not a string");
    return *s;
  }

  bool operator==(const Container& o) const {
    if (attrs != o.attrs || arrays.size() != o.arrays.size()) return false;
    for (const auto& [name, a] : arrays) {
      auto it = o.arrays.find(name);
      if (it == o.arrays.end() || it->second.shape != a.shape || it->second.data.size() != a.data.size()) return false;
      if (!a.data.empty() && std::memcmp(a.data.data(), it->second.data.data(), a.data.size() * sizeof(double)) != 0)
        return false;
    }
    return true;
  }
};

namespace detail {

inline constexpr char kMagic[4] = {'R', 'D', 'X', '1'};
inline constexpr std::size_t kPrefixBytes = 12;

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline void append_f64_le(std::string& out, const std::vector<double>& data) {
  const std::size_t start = out.size();
  out.resize(start + data.size() * 8);
  if constexpr (std::endian::native == std::endian::little) {
    if (!data.empty()) std::memcpy(out.data() + start, data.data(), data.size() * 8);
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &data[i], 8);
      for (int b = 0; b < 8; ++b) out[start + i * 8 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
}

inline void read_f64_le(const char* p, std::size_t count, std::vector<double>& data) {
  data.resize(count);
  if constexpr (std::endian::native == std::endian::little) {
    if (count) std::memcpy(data.data(), p, count * 8);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t bits = get_u64_le(p + i * 8);
      std::memcpy(&data[i], &bits, 8);
    }
  }
}

}  // namespace detail

inline std::string serialize_container(const Container& c) {
  using nlohmann::json;
  json header;
  header["format"] = "RDX1";
  json arrays = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, a] : c.arrays) {
    require(a.element_count() == a.data.size(), ErrorCode::DimensionMismatch,
            "array '" + name + "' shape does not match its data length");
    arrays.push_back({{"name", name}, {"dtype", "f64le"}, {"shape", a.shape}, {"offset", offset}});
    offset += a.data.size() * 8;
  }
  header["arrays"] = std::move(arrays);
  json attrs = json::object();
  for (const auto& [name, v] : c.attrs) std::visit([&](const auto& x) { attrs[name] = x; }, v);
  header["attrs"] = std::move(attrs);

  const std::string text = header.dump();
  std::string out(detail::kMagic, 4);
  detail::put_u64_le(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [name, a] : c.arrays) detail::append_f64_le(out, a.data);
  return out;
}

inline Container parse_container(const std::string& bytes) {
  using nlohmann::json;
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), detail::kMagic, 4) == 0, ErrorCode::BadMagic,
          "missing RDX1 magic");
  require(bytes.size() >= detail::kPrefixBytes, ErrorCode::TruncatedFile, "file shorter than the RDX1 prefix");
  const std::uint64_t header_len = detail::get_u64_le(bytes.data() + 4);
  require(header_len <= bytes.size() - detail::kPrefixBytes, ErrorCode::TruncatedFile, "header extends past end of file");
  const std::size_t data_start = detail::kPrefixBytes + header_len;
  const std::uint64_t data_len = bytes.size() - data_start;

  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(detail::kPrefixBytes),
                         bytes.begin() + static_cast<std::ptrdiff_t>(data_start));
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed RDX1 header: ") + e.what());
  }

  Container c;
  struct Span {
    std::uint64_t begin, end;
    std::string name;
  };
  std::vector<Span> spans;
  try {
    for (const auto& entry : header.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      require(entry.at("dtype").get<std::string>() == "f64le", ErrorCode::ParseError,
              "unsupported dtype for '" + name + "'");
      NdArray a;
      a.shape = entry.at("shape").get<std::vector<std::uint64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::uint64_t count = a.element_count();
      require(count <= data_len / 8 && offset <= data_len - count * 8, ErrorCode::TruncatedFile,
              "array '" + name + "' extends past end of file");
      detail::read_f64_le(bytes.data() + data_start + offset, count, a.data);
      spans.push_back({offset, offset + count * 8, name});
      require(c.arrays.emplace(name, std::move(a)).second, ErrorCode::ParseError, "duplicate array name '" + name + "'");
    }
    if (header.contains("attrs")) {
      for (const auto& [name, v] : header.at("attrs").items()) {
        if (v.is_number_integer()) c.attrs[name] = v.get<std::int64_t>();
        else if (v.is_number()) c.attrs[name] = v.get<double>();
        else if (v.is_string()) c.attrs[name] = v.get<std::string>();
        else fail(ErrorCode::ParseError, "attribute '" + name + "' is not a scalar");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed RDX1 header: ") + e.what());
  }

  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < spans.size(); ++i)
    require(spans[i].begin >= spans[i - 1].end, ErrorCode::OverlappingBlocks,
            "arrays '" + spans[i - 1].name + "' and '" + spans[i].name + "' overlap");
  return c;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  const std::string bytes = serialize_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoFailure, "write to '" + path.string() + "' failed");
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Container read_container(const std::filesystem::path& path) { return parse_container(read_file_bytes(path)); }

}  // namespace romda
