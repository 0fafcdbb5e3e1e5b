#include "egnn/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace egnn::kernels {

#if defined(EGNN_HAVE_X86)
const Ops& avx2_ops();  // kernels_avx2.cpp
#endif
#if defined(EGNN_HAVE_NEON)
const Ops& neon_ops();  // kernels_neon.cpp
#endif

namespace {

bool cpu_has_avx2() {
#if defined(EGNN_HAVE_X86) && defined(__GNUC__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops* detect_simd() {
#if defined(EGNN_HAVE_X86)
  if (cpu_has_avx2()) return &avx2_ops();
#endif
#if defined(EGNN_HAVE_NEON)
  return &neon_ops();
#endif
  return nullptr;
}

const Ops* resolve_auto() {
  if (const char* env = std::getenv("EGNN_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return &scalar_ops();
    if (std::strcmp(env, "avx2") == 0 || std::strcmp(env, "neon") == 0) {
      const Ops* simd = detect_simd();
      if (simd != nullptr && std::strcmp(simd->name, env) == 0) return simd;
      throw std::runtime_error(std::string("EGNN_KERNELS=") + env +
                               " requested but unavailable on this CPU");
    }
    // anything else, including "auto", falls through to detection
  }
  const Ops* simd = detect_simd();
  return simd != nullptr ? simd : &scalar_ops();
}

std::atomic<const Ops*> g_forced{nullptr};

}  // namespace

const Ops* simd_ops() { return detect_simd(); }

const Ops& active() {
  if (const Ops* forced = g_forced.load(std::memory_order_acquire)) {
    return *forced;
  }
  static const Ops* resolved = resolve_auto();
  return *resolved;
}

Backend active_backend() {
  const char* name = active().name;
  if (std::strcmp(name, "avx2") == 0) return Backend::avx2;
  if (std::strcmp(name, "neon") == 0) return Backend::neon;
  return Backend::scalar;
}

void force(Backend b) {
  if (b == Backend::scalar) {
    g_forced.store(&scalar_ops(), std::memory_order_release);
    return;
  }
  const Ops* simd = detect_simd();
  if (simd == nullptr || backend_name(b) != simd->name) {
    throw std::runtime_error("kernel backend " + backend_name(b) +
                             " unavailable on this CPU");
  }
  g_forced.store(simd, std::memory_order_release);
}

void reset() { g_forced.store(nullptr, std::memory_order_release); }

std::string backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

}  // namespace egnn::kernels
