#include "geodistill/geometry/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "geodistill/error.hpp"

namespace geodistill::geom {

void write_pnm(const std::string& path, const nx::Tensor& img, bool normalize) {
  if (!img.defined()) throw InvalidArgument("write_pnm: undefined tensor");
  std::size_t C, H, W;
  if (img.rank() == 2) {
    C = 1, H = img.dim(0), W = img.dim(1);
  } else if (img.rank() == 3 && (img.dim(0) == 1 || img.dim(0) == 3)) {
    C = img.dim(0), H = img.dim(1), W = img.dim(2);
  } else {
    throw InvalidArgument("write_pnm: expected [H, W], [1, H, W] or [3, H, W], got " +
                          nx::shape_str(img.shape()));
  }
  auto v = img.values();
  double lo = 0.0, hi = 1.0;
  if (normalize && !v.empty()) {
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    lo = *mn;
    hi = *mx > *mn ? *mx : *mn + 1.0;
  }
  std::string data(C * H * W, '\0');
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const double t = std::clamp((v[(c * H + y) * W + x] - lo) / (hi - lo), 0.0, 1.0);
        data[(y * W + x) * C + c] = static_cast<char>(std::lround(t * 255.0));
      }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << (C == 1 ? "P5" : "P6") << "\n" << W << " " << H << "\n255\n";
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path);
}

void write_csv(const std::string& path, const nx::Tensor& t) {
  if (!t.defined() || t.rank() == 0) throw InvalidArgument("write_csv: need rank >= 1");
  const std::size_t cols = t.dim(t.rank() - 1);
  auto v = t.values();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << v[i] << ((i + 1) % cols == 0 ? "\n" : ",");
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace geodistill::geom
