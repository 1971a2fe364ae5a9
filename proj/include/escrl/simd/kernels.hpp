#pragma once

// Reductions over response-map channels. Every kernel exists as a scalar
// reference and, where the target supports it, an AVX2 (x86-64) or NEON
// (aarch64) variant. The variant is chosen once at runtime from CPU features
// and can be overridden with ESCRL_SIMD=scalar|avx2|neon or select_isa().
//
// Vector variants reassociate the sums, so results agree with the scalar
// reference to within a few ulps of the summed magnitudes, not bitwise.

#include <cstddef>
#include <span>
#include <string_view>

namespace escrl::simd {

enum class Isa { kScalar, kAvx2, kNeon };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum_i a[i]^2
  double (*sum_sq)(const double* a, std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*sum_sq_diff)(const double* a, const double* b, std::size_t n);
};

std::string_view isa_name(Isa isa);
bool isa_available(Isa isa);

// Throws ConfigError when `isa` is not compiled in or not supported by the CPU.
const KernelTable& table(Isa isa);

const KernelTable& active();
Isa active_isa();
void select_isa(Isa isa);

// Restores the automatically detected variant on scope exit.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { select_isa(isa); }
  ~ScopedIsa() { select_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double sum_sq(std::span<const double> a) { return active().sum_sq(a.data(), a.size()); }
inline double sum_sq_diff(std::span<const double> a, std::span<const double> b) {
  return active().sum_sq_diff(a.data(), b.data(), a.size());
}

namespace detail {
extern const KernelTable kScalarTable;
#if defined(ESCRL_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
#if defined(ESCRL_HAVE_NEON)
extern const KernelTable kNeonTable;
#endif
}  // namespace detail

}  // namespace escrl::simd
