#include "evfuse/binary_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "evfuse/errors.hpp"

namespace evfuse::io {
namespace {

constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint32_t kMaxRank = 4;

template <class T>
void write_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> buf;
  std::memcpy(buf.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  os.write(buf.data(), sizeof(T));
  if (!os) throw IOError("write failed");
}

template <class T>
T read_le(std::istream& is) {
  std::array<char, sizeof(T)> buf;
  is.read(buf.data(), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) throw ParseError("unexpected end of data");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  T v;
  std::memcpy(&v, buf.data(), sizeof(T));
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, v); }
void write_bytes(std::ostream& os, const std::string& s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!os) throw IOError("write failed");
}

std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
double read_f64(std::istream& is) { return read_le<double>(is); }
std::string read_bytes(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) throw ParseError("unexpected end of data");
  return s;
}

void write_tensor_block(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) write_u64(os, d);
  for (double v : t.values()) write_f64(os, v);
}

Tensor read_tensor_block(std::istream& is) {
  const auto ndim = read_u32(is);
  if (ndim == 0 || ndim > kMaxRank) throw ParseError("tensor rank out of range");
  std::vector<std::size_t> shape(ndim);
  for (auto& d : shape) {
    d = read_u64(is);
    if (d == 0 || d > (1u << 24)) throw ParseError("tensor dimension out of range");
  }
  std::vector<double> values(shape_volume(shape));
  for (auto& v : values) v = read_f64(is);
  return Tensor(std::move(shape), std::move(values));
}

void write_tensor_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IOError("cannot open " + path.string() + " for writing");
  os.write(kTensorMagic, 4);
  write_u32(os, kTensorFormatVersion);
  write_tensor_block(os, t);
}

Tensor read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open " + path.string());
  if (read_bytes(is, 4) != std::string(kTensorMagic, 4))
    throw ParseError(path.string() + ": not a TNSR tensor file");
  if (read_u32(is) != kTensorFormatVersion)
    throw ParseError(path.string() + ": unsupported tensor format version");
  return read_tensor_block(is);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IOError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IOError("write failed for " + path.string());
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace evfuse::io
