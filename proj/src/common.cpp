#include <atomic>
#include <cmath>
#include <numbers>

#include "atriamap/error.hpp"
#include "atriamap/parallel.hpp"
#include "atriamap/rng.hpp"

namespace atriamap {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::OutOfFov: return "out-of-fov";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::BadVersion: return "bad-version";
    case ErrorKind::TruncatedPayload: return "truncated-payload";
    case ErrorKind::LengthMismatch: return "length-mismatch";
    case ErrorKind::EmptyVolume: return "empty-volume";
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::IndexOutOfRange: return "index-out-of-range";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::BudgetExceeded: return "budget-exceeded";
    case ErrorKind::EmptySurface: return "empty-surface";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

double Rng::normal() {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

namespace {
std::atomic<unsigned> g_max_threads{0};
}

void set_max_threads(unsigned n) { g_max_threads.store(n); }

unsigned max_threads() {
  const unsigned n = g_max_threads.load();
  if (n != 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace atriamap
