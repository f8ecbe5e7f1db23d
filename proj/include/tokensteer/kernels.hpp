#pragma once

// Row-batched arithmetic kernels over token-major hidden-state blocks.
//
// Every kernel reduces each row in ascending component order with separate
// multiply and add (no fused multiply-add), and the vector variants put one
// *row* per lane. Scalar, AVX2 and NEON therefore produce bit-identical
// results, and match a plain `acc += a[k] * b[k]` loop exactly.

#include <cstddef>
#include <span>
#include <string_view>

namespace tokensteer::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view to_string(Isa isa) noexcept;

/// Best ISA supported by this CPU and build.
Isa detect_isa() noexcept;
/// ISA used by the free functions below. Defaults to detect_isa(), or the
/// TOKENSTEER_ISA environment variable ("scalar", "avx2", "neon") when set.
Isa active_isa() noexcept;
/// Forces an ISA (tests, benchmarks). Returns false if unsupported here.
bool set_active_isa(Isa isa) noexcept;
bool isa_supported(Isa isa) noexcept;

/// out[r] = sum_k rows[r*dim + k] * dir[k]
void project_rows(std::span<const double> rows, std::size_t dim, std::span<const double> dir,
                  std::span<double> out);
/// rows[r*dim + k] = rows[r*dim + k] + coeff[r] * dir[k]
void add_scaled_direction(std::span<double> rows, std::size_t dim, std::span<const double> dir,
                          std::span<const double> coeff);
/// out[r] = sum_k (a[r*dim + k] - b[r*dim + k])^2
void row_squared_distance(std::span<const double> a, std::span<const double> b, std::size_t dim,
                          std::span<double> out);

/// Same operations pinned to one ISA, for equivalence testing.
struct KernelTable {
  Isa isa;
  void (*project_rows)(const double* rows, std::size_t n_rows, std::size_t dim, const double* dir,
                       double* out);
  void (*add_scaled_direction)(double* rows, std::size_t n_rows, std::size_t dim,
                               const double* dir, const double* coeff);
  void (*row_squared_distance)(const double* a, const double* b, std::size_t n_rows,
                               std::size_t dim, double* out);
};

/// nullptr when the ISA is not compiled in or not supported by the CPU.
const KernelTable* table_for(Isa isa) noexcept;

}  // namespace tokensteer::kernels
