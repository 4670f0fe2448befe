#include <atomic>
#include <stdexcept>
#include <string>

#include "atriamap/kernels.hpp"

namespace atriamap::kernels {

#ifdef ATRIAMAP_HAVE_AVX2
const KernelTable& avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#ifdef ATRIAMAP_HAVE_AVX2
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

bool available(Backend b) { return b == Backend::Scalar || avx2_table() != nullptr; }

namespace {

Backend detect() { return avx2_table() ? Backend::Avx2 : Backend::Scalar; }

std::atomic<const KernelTable*>& current_table() {
  static std::atomic<const KernelTable*> table{detect() == Backend::Avx2 ? avx2_table()
                                                                        : &scalar_table()};
  return table;
}

}  // namespace

Backend active_backend() {
  return current_table().load() == &scalar_table() ? Backend::Scalar : Backend::Avx2;
}

void set_backend(Backend b) {
  if (!available(b)) throw std::invalid_argument("kernel backend not available: " + std::string(to_string(b)));
  current_table().store(b == Backend::Scalar ? &scalar_table() : avx2_table());
}

const KernelTable& active() { return *current_table().load(); }

std::string_view to_string(Backend b) { return b == Backend::Scalar ? "scalar" : "avx2"; }

Backend parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::Scalar;
  if (name == "avx2") return Backend::Avx2;
  if (name == "auto") return detect();
  throw std::invalid_argument("unknown kernel backend: " + std::string(name));
}

}  // namespace atriamap::kernels
