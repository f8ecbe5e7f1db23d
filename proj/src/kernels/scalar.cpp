#include "tables.hpp"

namespace tokensteer::kernels::detail {
namespace {

void project_rows(const double* rows, std::size_t n_rows, std::size_t dim, const double* dir,
                  double* out) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    const double* row = rows + r * dim;
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) acc += row[k] * dir[k];
    out[r] = acc;
  }
}

void add_scaled_direction(double* rows, std::size_t n_rows, std::size_t dim, const double* dir,
                          const double* coeff) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    double* row = rows + r * dim;
    const double c = coeff[r];
    for (std::size_t k = 0; k < dim; ++k) row[k] = row[k] + c * dir[k];
  }
}

void row_squared_distance(const double* a, const double* b, std::size_t n_rows, std::size_t dim,
                          double* out) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = a[r * dim + k] - b[r * dim + k];
      acc += diff * diff;
    }
    out[r] = acc;
  }
}

}  // namespace

const KernelTable kScalarTable{Isa::Scalar, project_rows, add_scaled_direction,
                               row_squared_distance};

}  // namespace tokensteer::kernels::detail
