#pragma once

#include "tokensteer/kernels.hpp"

namespace tokensteer::kernels::detail {

extern const KernelTable kScalarTable;
// Null when not compiled for this target.
extern const KernelTable* const kAvx2Table;
extern const KernelTable* const kNeonTable;

}  // namespace tokensteer::kernels::detail
