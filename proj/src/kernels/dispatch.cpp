#include <atomic>
#include <cstdlib>
#include <string>

#include "tables.hpp"
#include "tokensteer/error.hpp"

namespace tokensteer::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa initial_isa() noexcept {
  if (const char* env = std::getenv("TOKENSTEER_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
    if (v == "neon" && isa_supported(Isa::Neon)) return Isa::Neon;
  }
  return detect_isa();
}

std::atomic<const KernelTable*>& active_table() noexcept {
  static std::atomic<const KernelTable*> table{table_for(initial_isa())};
  return table;
}

const KernelTable& active() noexcept { return *active_table().load(std::memory_order_relaxed); }

void check_rows(std::size_t total, std::size_t dim, std::size_t n_rows, const char* what) {
  if (dim == 0 || total != n_rows * dim)
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": buffer is not n_rows x dim");
}

}  // namespace

std::string_view to_string(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "?";
}

bool isa_supported(Isa isa) noexcept { return table_for(isa) != nullptr; }

const KernelTable* table_for(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return &detail::kScalarTable;
    case Isa::Avx2: return cpu_has_avx2() ? detail::kAvx2Table : nullptr;
    case Isa::Neon: return detail::kNeonTable;
  }
  return nullptr;
}

Isa detect_isa() noexcept {
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

Isa active_isa() noexcept { return active().isa; }

bool set_active_isa(Isa isa) noexcept {
  const KernelTable* t = table_for(isa);
  if (t == nullptr) return false;
  active_table().store(t, std::memory_order_relaxed);
  return true;
}

void project_rows(std::span<const double> rows, std::size_t dim, std::span<const double> dir,
                  std::span<double> out) {
  check_rows(rows.size(), dim, out.size(), "project_rows");
  if (dir.size() != dim) throw Error(ErrorCode::DimensionMismatch, "project_rows: direction length");
  active().project_rows(rows.data(), out.size(), dim, dir.data(), out.data());
}

void add_scaled_direction(std::span<double> rows, std::size_t dim, std::span<const double> dir,
                          std::span<const double> coeff) {
  check_rows(rows.size(), dim, coeff.size(), "add_scaled_direction");
  if (dir.size() != dim)
    throw Error(ErrorCode::DimensionMismatch, "add_scaled_direction: direction length");
  active().add_scaled_direction(rows.data(), coeff.size(), dim, dir.data(), coeff.data());
}

void row_squared_distance(std::span<const double> a, std::span<const double> b, std::size_t dim,
                          std::span<double> out) {
  check_rows(a.size(), dim, out.size(), "row_squared_distance");
  if (b.size() != a.size()) throw Error(ErrorCode::ShapeMismatch, "row_squared_distance: operand sizes");
  active().row_squared_distance(a.data(), b.data(), out.size(), dim, out.data());
}

}  // namespace tokensteer::kernels
