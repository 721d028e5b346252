#pragma once

// Little-endian primitives and the "TNSR" tensor file format:
//   magic "TNSR" | u32 version | u32 ndim | u64 dims[ndim] | f64 values[...]

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "evfuse/tensor.hpp"

namespace evfuse::io {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_bytes(std::ostream& os, const std::string& s);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_bytes(std::istream& is, std::size_t n);

/// ndim, dims, values (the shared tensor block, no magic).
void write_tensor_block(std::ostream& os, const Tensor& t);
Tensor read_tensor_block(std::istream& is);

void write_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path);

/// Whole file into a string; throws IOError.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a, used for config hashes.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace evfuse::io
