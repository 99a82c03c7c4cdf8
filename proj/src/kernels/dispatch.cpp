#include <atomic>
#include <cstdlib>
#include <string>

#include "geodistill/error.hpp"
#include "geodistill/kernels/kernels.hpp"

namespace geodistill::kernels {
namespace {

const KernelTable* resolve_default() {
  if (const char* env = std::getenv("GEODISTILL_KERNELS")) {
    if (std::string(env) == "scalar") return &scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{resolve_default()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::Scalar) {
    current().store(&scalar_table());
    return;
  }
  const KernelTable* t = avx2_table();
  if (t == nullptr) throw InvalidArgument("AVX2 kernels are not available on this machine");
  current().store(t);
}

Backend default_backend() { return resolve_default()->backend; }

std::string_view backend_name(Backend b) { return b == Backend::Scalar ? "scalar" : "avx2"; }

}  // namespace geodistill::kernels
