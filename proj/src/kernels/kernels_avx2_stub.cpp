// Used on targets where the AVX2 translation unit is not built.
#include "geodistill/kernels/kernels.hpp"

namespace geodistill::kernels {

const KernelTable* avx2_table() { return nullptr; }

}  // namespace geodistill::kernels
