// Reader/writer for 2-D arrays in the NPY v1.0 format.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

namespace bit::npy {

class NpyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major float64 copy of the stored array, shape as on disk.
struct Array2D {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;
};

namespace detail {

inline std::string read_header(std::istream& in, const std::string& path) {
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw NpyError(path + ": not an NPY file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::uint32_t header_len = 0;
  if (version[0] == 1) {
    unsigned char len[2];
    in.read(reinterpret_cast<char*>(len), 2);
    header_len = static_cast<std::uint32_t>(len[0]) | (static_cast<std::uint32_t>(len[1]) << 8);
  } else if (version[0] == 2 || version[0] == 3) {
    unsigned char len[4];
    in.read(reinterpret_cast<char*>(len), 4);
    header_len = static_cast<std::uint32_t>(len[0]) | (static_cast<std::uint32_t>(len[1]) << 8) |
                 (static_cast<std::uint32_t>(len[2]) << 16) | (static_cast<std::uint32_t>(len[3]) << 24);
  } else {
    throw NpyError(path + ": unsupported NPY version " + std::to_string(version[0]));
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw NpyError(path + ": truncated header");
  return header;
}

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

}  // namespace detail

inline Array2D read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NpyError("cannot open " + path);
  const std::string header = detail::read_header(in, path);

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([<>|=]?)([fi])(\d)')"))) {
    throw NpyError(path + ": missing descr");
  }
  const std::string order = m[1], kind = m[2];
  const int width = std::stoi(m[3]);
  if (order == ">") throw NpyError(path + ": big-endian payloads are not supported");
  if (!((kind == "f" && (width == 4 || width == 8)) || (kind == "i" && (width == 4 || width == 8)))) {
    throw NpyError(path + ": unsupported dtype " + kind + std::to_string(width));
  }
  const bool fortran = std::regex_search(header, std::regex(R"('fortran_order'\s*:\s*True)"));
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d*)\s*,?\s*\))"))) {
    throw NpyError(path + ": expected a 1-D or 2-D shape");
  }
  Array2D a;
  a.rows = std::stoll(m[1]);
  a.cols = m[2].length() == 0 ? 1 : std::stoll(m[2]);
  if (m[2].length() == 0) std::swap(a.rows, a.cols);  // 1-D arrays load as a single row

  const auto count = static_cast<std::size_t>(a.rows * a.cols);
  std::vector<char> raw(count * static_cast<std::size_t>(width));
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw NpyError(path + ": truncated payload");

  a.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* p = raw.data() + i * static_cast<std::size_t>(width);
    double v = 0;
    if (kind == "f") {
      v = width == 4 ? static_cast<double>(detail::load_le<float>(p)) : detail::load_le<double>(p);
    } else {
      v = width == 4 ? static_cast<double>(detail::load_le<std::int32_t>(p))
                     : static_cast<double>(detail::load_le<std::int64_t>(p));
    }
    if (fortran) {
      const auto r = static_cast<std::int64_t>(i) % a.rows;
      const auto c = static_cast<std::int64_t>(i) / a.rows;
      a.data[static_cast<std::size_t>(r * a.cols + c)] = v;
    } else {
      a.data[i] = v;
    }
  }
  return a;
}

// Writes a row-major float32 array of the given shape.
inline void write_f32(const std::string& path, std::int64_t rows, std::int64_t cols, const float* data) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(rows) + ", " +
                       std::to_string(cols) + "), }";
  // magic(6) + version(2) + len(2) + header + '\n' is padded to a multiple of 64.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw NpyError("cannot write " + path);
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_le[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_le, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::int64_t i = 0; i < rows * cols; ++i) {
    float v = data[i];
    if constexpr (std::endian::native == std::endian::big) {
      auto* b = reinterpret_cast<unsigned char*>(&v);
      std::reverse(b, b + sizeof(float));
    }
    out.write(reinterpret_cast<const char*>(&v), sizeof(float));
  }
  if (!out) throw NpyError("write failed: " + path);
}

}  // namespace bit::npy
