// Two rows per float64x2_t lane; vmul + vadd only (never vfma) so results
// match the scalar kernel exactly.

#include "tables.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

namespace tokensteer::kernels::detail {
namespace {

void project_rows(const double* rows, std::size_t n_rows, std::size_t dim, const double* dir,
                  double* out) {
  std::size_t r = 0;
  for (; r + 2 <= n_rows; r += 2) {
    const double* p0 = rows + r * dim;
    const double* p1 = p0 + dim;
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t k = 0;
    for (; k + 2 <= dim; k += 2) {
      const float64x2_t a0 = vld1q_f64(p0 + k);
      const float64x2_t a1 = vld1q_f64(p1 + k);
      acc = vaddq_f64(acc, vmulq_f64(vzip1q_f64(a0, a1), vdupq_n_f64(dir[k])));
      acc = vaddq_f64(acc, vmulq_f64(vzip2q_f64(a0, a1), vdupq_n_f64(dir[k + 1])));
    }
    for (; k < dim; ++k) {
      const double col[2] = {p0[k], p1[k]};
      acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(col), vdupq_n_f64(dir[k])));
    }
    vst1q_f64(out + r, acc);
  }
  kScalarTable.project_rows(rows + r * dim, n_rows - r, dim, dir, out + r);
}

void add_scaled_direction(double* rows, std::size_t n_rows, std::size_t dim, const double* dir,
                          const double* coeff) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    double* row = rows + r * dim;
    const float64x2_t c = vdupq_n_f64(coeff[r]);
    std::size_t k = 0;
    for (; k + 2 <= dim; k += 2)
      vst1q_f64(row + k, vaddq_f64(vld1q_f64(row + k), vmulq_f64(c, vld1q_f64(dir + k))));
    for (; k < dim; ++k) row[k] = row[k] + coeff[r] * dir[k];
  }
}

void row_squared_distance(const double* a, const double* b, std::size_t n_rows, std::size_t dim,
                          double* out) {
  std::size_t r = 0;
  for (; r + 2 <= n_rows; r += 2) {
    const double* a0 = a + r * dim;
    const double* b0 = b + r * dim;
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t k = 0;
    for (; k + 2 <= dim; k += 2) {
      const float64x2_t d0 = vsubq_f64(vld1q_f64(a0 + k), vld1q_f64(b0 + k));
      const float64x2_t d1 = vsubq_f64(vld1q_f64(a0 + dim + k), vld1q_f64(b0 + dim + k));
      const float64x2_t c0 = vzip1q_f64(d0, d1);
      const float64x2_t c1 = vzip2q_f64(d0, d1);
      acc = vaddq_f64(acc, vmulq_f64(c0, c0));
      acc = vaddq_f64(acc, vmulq_f64(c1, c1));
    }
    for (; k < dim; ++k) {
      const double col[2] = {a0[k] - b0[k], a0[dim + k] - b0[dim + k]};
      const float64x2_t c = vld1q_f64(col);
      acc = vaddq_f64(acc, vmulq_f64(c, c));
    }
    vst1q_f64(out + r, acc);
  }
  kScalarTable.row_squared_distance(a + r * dim, b + r * dim, n_rows - r, dim, out + r);
}

const KernelTable kTable{Isa::Neon, project_rows, add_scaled_direction, row_squared_distance};

}  // namespace

const KernelTable* const kNeonTable = &kTable;

}  // namespace tokensteer::kernels::detail

#else

namespace tokensteer::kernels::detail {
const KernelTable* const kNeonTable = nullptr;
}

#endif
