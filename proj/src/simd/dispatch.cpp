#include <atomic>
#include <cstdlib>
#include <string>

#include "escrl/error.hpp"
#include "escrl/simd/kernels.hpp"

namespace escrl::simd {
namespace {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(ESCRL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::kNeon:
#if defined(ESCRL_HAVE_NEON)
      return true;  // baseline on aarch64
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* table_ptr(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return &detail::kScalarTable;
#if defined(ESCRL_HAVE_AVX2)
    case Isa::kAvx2: return &detail::kAvx2Table;
#endif
#if defined(ESCRL_HAVE_NEON)
    case Isa::kNeon: return &detail::kNeonTable;
#endif
    default: return nullptr;
  }
}

Isa detect() {
  if (const char* env = std::getenv("ESCRL_SIMD")) {
    std::string v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && isa_available(Isa::kAvx2)) return Isa::kAvx2;
    if (v == "neon" && isa_available(Isa::kNeon)) return Isa::kNeon;
  }
  if (isa_available(Isa::kAvx2)) return Isa::kAvx2;
  if (isa_available(Isa::kNeon)) return Isa::kNeon;
  return Isa::kScalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{table_ptr(detect())};
  return ptr;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
  }
  return "?";
}

bool isa_available(Isa isa) { return table_ptr(isa) != nullptr && cpu_supports(isa); }

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) throw ConfigError("SIMD variant not available: " + std::string(isa_name(isa)));
  return *table_ptr(isa);
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

Isa active_isa() { return active().isa; }

void select_isa(Isa isa) { current().store(&table(isa), std::memory_order_relaxed); }

}  // namespace escrl::simd
