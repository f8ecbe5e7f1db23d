// Built with -mavx2 (deliberately without -mfma): products and sums stay
// separately rounded so lanes match the scalar kernel bit for bit.

#include "tables.hpp"

#if defined(TOKENSTEER_HAVE_AVX2)

#include <immintrin.h>

namespace tokensteer::kernels::detail {
namespace {

// Columns k..k+3 of four rows: c[j] = (r0[k+j], r1[k+j], r2[k+j], r3[k+j]).
inline void transpose4(__m256d a0, __m256d a1, __m256d a2, __m256d a3, __m256d c[4]) {
  const __m256d t0 = _mm256_unpacklo_pd(a0, a1);
  const __m256d t1 = _mm256_unpackhi_pd(a0, a1);
  const __m256d t2 = _mm256_unpacklo_pd(a2, a3);
  const __m256d t3 = _mm256_unpackhi_pd(a2, a3);
  c[0] = _mm256_permute2f128_pd(t0, t2, 0x20);
  c[1] = _mm256_permute2f128_pd(t1, t3, 0x20);
  c[2] = _mm256_permute2f128_pd(t0, t2, 0x31);
  c[3] = _mm256_permute2f128_pd(t1, t3, 0x31);
}

void project_rows(const double* rows, std::size_t n_rows, std::size_t dim, const double* dir,
                  double* out) {
  std::size_t r = 0;
  for (; r + 4 <= n_rows; r += 4) {
    const double* p0 = rows + r * dim;
    const double* p1 = p0 + dim;
    const double* p2 = p1 + dim;
    const double* p3 = p2 + dim;
    __m256d acc = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + 4 <= dim; k += 4) {
      __m256d c[4];
      transpose4(_mm256_loadu_pd(p0 + k), _mm256_loadu_pd(p1 + k), _mm256_loadu_pd(p2 + k),
                 _mm256_loadu_pd(p3 + k), c);
      acc = _mm256_add_pd(acc, _mm256_mul_pd(c[0], _mm256_set1_pd(dir[k])));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(c[1], _mm256_set1_pd(dir[k + 1])));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(c[2], _mm256_set1_pd(dir[k + 2])));
      acc = _mm256_add_pd(acc, _mm256_mul_pd(c[3], _mm256_set1_pd(dir[k + 3])));
    }
    for (; k < dim; ++k) {
      const __m256d col = _mm256_set_pd(p3[k], p2[k], p1[k], p0[k]);
      acc = _mm256_add_pd(acc, _mm256_mul_pd(col, _mm256_set1_pd(dir[k])));
    }
    _mm256_storeu_pd(out + r, acc);
  }
  kScalarTable.project_rows(rows + r * dim, n_rows - r, dim, dir, out + r);
}

void add_scaled_direction(double* rows, std::size_t n_rows, std::size_t dim, const double* dir,
                          const double* coeff) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    double* row = rows + r * dim;
    const __m256d c = _mm256_set1_pd(coeff[r]);
    std::size_t k = 0;
    for (; k + 4 <= dim; k += 4) {
      const __m256d h = _mm256_loadu_pd(row + k);
      _mm256_storeu_pd(row + k, _mm256_add_pd(h, _mm256_mul_pd(c, _mm256_loadu_pd(dir + k))));
    }
    for (; k < dim; ++k) row[k] = row[k] + coeff[r] * dir[k];
  }
}

void row_squared_distance(const double* a, const double* b, std::size_t n_rows, std::size_t dim,
                          double* out) {
  std::size_t r = 0;
  for (; r + 4 <= n_rows; r += 4) {
    const double* a0 = a + r * dim;
    const double* b0 = b + r * dim;
    __m256d acc = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + 4 <= dim; k += 4) {
      __m256d c[4];
      transpose4(_mm256_sub_pd(_mm256_loadu_pd(a0 + k), _mm256_loadu_pd(b0 + k)),
                 _mm256_sub_pd(_mm256_loadu_pd(a0 + dim + k), _mm256_loadu_pd(b0 + dim + k)),
                 _mm256_sub_pd(_mm256_loadu_pd(a0 + 2 * dim + k), _mm256_loadu_pd(b0 + 2 * dim + k)),
                 _mm256_sub_pd(_mm256_loadu_pd(a0 + 3 * dim + k), _mm256_loadu_pd(b0 + 3 * dim + k)),
                 c);
      for (const __m256d& col : c) acc = _mm256_add_pd(acc, _mm256_mul_pd(col, col));
    }
    for (; k < dim; ++k) {
      const __m256d col = _mm256_set_pd(a0[3 * dim + k] - b0[3 * dim + k], a0[2 * dim + k] - b0[2 * dim + k],
                                        a0[dim + k] - b0[dim + k], a0[k] - b0[k]);
      acc = _mm256_add_pd(acc, _mm256_mul_pd(col, col));
    }
    _mm256_storeu_pd(out + r, acc);
  }
  kScalarTable.row_squared_distance(a + r * dim, b + r * dim, n_rows - r, dim, out + r);
}

const KernelTable kTable{Isa::Avx2, project_rows, add_scaled_direction, row_squared_distance};

}  // namespace

const KernelTable* const kAvx2Table = &kTable;

}  // namespace tokensteer::kernels::detail

#else

namespace tokensteer::kernels::detail {
const KernelTable* const kAvx2Table = nullptr;
}

#endif
