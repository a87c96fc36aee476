#include "ctseg/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace ctseg::kern {

const Kernels& scalar_kernels();
const KernelsF& scalar_kernels_f();
#ifdef CTSEG_HAVE_AVX2
const Kernels& avx2_kernels();
const KernelsF& avx2_kernels_f();
#endif

namespace {

bool cpu_has_avx2() {
#if defined(CTSEG_HAVE_AVX2) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa resolve_startup_isa() {
  const char* env = std::getenv("CTSEG_SIMD");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!cpu_has_avx2())
        throw std::runtime_error("CTSEG_SIMD=avx2 but this CPU lacks AVX2");
      return Isa::avx2;
    }
    // anything else, including "auto", falls through to detection
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

Isa g_isa = resolve_startup_isa();

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return cpu_has_avx2();
  }
  return false;
}

const Kernels& table(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return scalar_kernels();
    case Isa::avx2:
#ifdef CTSEG_HAVE_AVX2
      if (cpu_has_avx2()) return avx2_kernels();
#endif
      throw std::runtime_error("AVX2 kernels unavailable on this machine");
  }
  throw std::runtime_error("unknown ISA");
}

void force_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::runtime_error("requested ISA unsupported");
  g_isa = isa;
}

Isa active_isa() { return g_isa; }

const Kernels& active() { return table(g_isa); }

const KernelsF& table_f(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return scalar_kernels_f();
    case Isa::avx2:
#ifdef CTSEG_HAVE_AVX2
      if (cpu_has_avx2()) return avx2_kernels_f();
#endif
      throw std::runtime_error("AVX2 kernels unavailable on this machine");
  }
  throw std::runtime_error("unknown ISA");
}

const KernelsF& active_f() { return table_f(g_isa); }

std::string isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

}  // namespace ctseg::kern
