#pragma once

// GDTN tensor blobs, little-endian:
//   "GDTN" | rank: u64 | dims: rank x u64 | values: prod(dims) x f64

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "geodistill/numerics/tensor.hpp"

namespace geodistill::nx {

std::vector<std::uint8_t> encode_gdtn(const Tensor& t);

// Throws InvalidArgument on a malformed blob.
Tensor decode_gdtn(std::span<const std::uint8_t> bytes);

// Throws IoError when the file cannot be written/read.
void write_gdtn(const std::filesystem::path& path, const Tensor& t);
Tensor read_gdtn(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace geodistill::nx
