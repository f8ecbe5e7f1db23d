#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cstdint>
#include <random>

#include "oracles.hpp"
#include "tokensteer/kernels.hpp"

using namespace tokensteer::kernels;

namespace {

std::vector<const KernelTable*> available() {
  std::vector<const KernelTable*> out;
  for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Neon})
    if (const auto* t = table_for(isa)) out.push_back(t);
  return out;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("scalar table is always present and matches dispatch names") {
  REQUIRE(table_for(Isa::Scalar) != nullptr);
  CHECK(isa_supported(Isa::Scalar));
  CHECK(to_string(Isa::Avx2) == "avx2");
  CHECK(isa_supported(detect_isa()));
  MESSAGE("active isa: " << to_string(active_isa()));
}

TEST_CASE("every compiled ISA is bit-identical to the naive loops") {
  std::mt19937_64 g(7);
  std::uniform_int_distribution<std::size_t> rows_d(0, 23), dim_d(1, 37);
  const auto tables = available();
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rows_d(g), d = dim_d(g);
    const auto rows = oracle::gaussian(g, n * d, 3.0);
    const auto other = oracle::gaussian(g, n * d, 3.0);
    const auto dir = oracle::gaussian(g, d);
    const auto coeff = oracle::gaussian(g, n, 2.0);

    std::vector<double> proj(n), dist(n), upd = rows;
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0, sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        acc += rows[r * d + k] * dir[k];
        const double diff = rows[r * d + k] - other[r * d + k];
        sq += diff * diff;
        upd[r * d + k] = upd[r * d + k] + coeff[r] * dir[k];
      }
      proj[r] = acc;
      dist[r] = sq;
    }
    for (const auto* t : tables) {
      CAPTURE(to_string(t->isa));
      std::vector<double> p(n), s(n), u = rows;
      t->project_rows(rows.data(), n, d, dir.data(), p.data());
      t->row_squared_distance(rows.data(), other.data(), n, d, s.data());
      t->add_scaled_direction(u.data(), n, d, dir.data(), coeff.data());
      CHECK(same_bits(p, proj));
      CHECK(same_bits(s, dist));
      CHECK(same_bits(u, upd));
    }
  }
}

TEST_CASE("set_active_isa switches the span entry points") {
  const Isa before = active_isa();
  std::vector<double> rows{1, 2, 3, 4, 5, 6}, dir{0.5, -1, 2}, out(2);
  for (const auto* t : available()) {
    REQUIRE(set_active_isa(t->isa));
    CHECK(active_isa() == t->isa);
    project_rows(rows, 3, dir, out);
    CHECK(out[0] == 0.5 - 2 + 6);
    CHECK(out[1] == 2 - 5 + 12);
  }
  set_active_isa(before);
}

TEST_CASE("span entry points check shapes") {
  std::vector<double> rows(6), dir(3), out(3);
  CHECK_THROWS(project_rows(rows, 3, dir, out));
  std::vector<double> coeff(1);
  CHECK_THROWS(add_scaled_direction(rows, 3, dir, coeff));
}
