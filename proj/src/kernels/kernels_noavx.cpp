#include "fairlab/kernels.hpp"

namespace fairlab::kernels {

const KernelTable* avx2_table() { return nullptr; }

}  // namespace fairlab::kernels
