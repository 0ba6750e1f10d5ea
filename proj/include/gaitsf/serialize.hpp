#pragma once

// Tensor files: the 8-byte magic "GAITSF01", a little-endian uint64 header
// length, a UTF-8 JSON header, then every tensor listed in header["tensors"]
// as row-major little-endian float64.

#include "gaitsf/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace gaitsf {

inline constexpr char kTensorMagic[8] = {'G', 'A', 'I', 'T', 'S', 'F', '0', '1'};

struct NamedTensor {
  std::string name;
  Mat value;
};

namespace detail {

template <typename T>
void put_le(std::ofstream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw IoError("truncated tensor file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace detail

/// `header` receives a "tensors" array describing `tensors`.
inline void write_tensor_file(const std::filesystem::path& path, nlohmann::json header,
                              const std::vector<NamedTensor>& tensors) {
  auto& list = header["tensors"] = nlohmann::json::array();
  for (const auto& t : tensors) list.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kTensorMagic, sizeof(kTensorMagic));
  detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors)
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) detail::put_le<double>(out, t.value(r, c));
  if (!out) throw IoError("write failed for " + path.string());
}

struct TensorFile {
  nlohmann::json header;
  std::vector<NamedTensor> tensors;

  const Mat& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw IoError("tensor '" + name + "' missing from file");
  }
};

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) throw IoError("bad magic in " + path.string());
  const auto len = detail::get_le<std::uint64_t>(in);
  if (len > (1u << 24)) throw IoError("implausible header length in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated header in " + path.string());
  TensorFile tf;
  try {
    tf.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("bad header in " + path.string() + ": " + ex.what());
  }
  for (const auto& d : tf.header.at("tensors")) {
    NamedTensor t{d.at("name").get<std::string>(),
                  Mat(d.at("rows").get<Eigen::Index>(), d.at("cols").get<Eigen::Index>())};
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = detail::get_le<double>(in);
    tf.tensors.push_back(std::move(t));
  }
  return tf;
}

}  // namespace gaitsf
