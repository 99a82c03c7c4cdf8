#include "geodistill/numerics/gdtn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "geodistill/error.hpp"

namespace geodistill::nx {
namespace {

constexpr char kMagic[4] = {'G', 'D', 'T', 'N'};
constexpr std::uint64_t kMaxRank = 16;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_gdtn(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 8 * (1 + t.rank()) + 8 * t.numel());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u64(out, t.rank());
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_gdtn(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw InvalidArgument("gdtn: bad magic");
  const std::uint64_t rank = get_u64(bytes.data() + 4);
  if (rank > kMaxRank || bytes.size() < 12 + 8 * rank) throw InvalidArgument("gdtn: bad header");
  Shape shape(rank);
  std::uint64_t n = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    shape[i] = get_u64(bytes.data() + 12 + 8 * i);
    if (shape[i] != 0 && n > (bytes.size() / 8) / shape[i]) throw InvalidArgument("gdtn: bad dims");
    n *= shape[i];
  }
  const std::size_t offset = 12 + 8 * rank;
  if (bytes.size() != offset + 8 * n) throw InvalidArgument("gdtn: truncated or oversized payload");
  std::vector<double> values(n);
  for (std::uint64_t i = 0; i < n; ++i)
    values[i] = std::bit_cast<double>(get_u64(bytes.data() + offset + 8 * i));
  return Tensor(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_gdtn(const std::filesystem::path& path, const Tensor& t) {
  write_file_bytes(path, encode_gdtn(t));
}

Tensor read_gdtn(const std::filesystem::path& path) { return decode_gdtn(read_file_bytes(path)); }

}  // namespace geodistill::nx
