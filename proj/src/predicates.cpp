#include <cmath>
#include <limits>

#include <boost/multiprecision/cpp_int.hpp>

#include "atriamap/geometry.hpp"

namespace atriamap {
namespace {

using Rational = boost::multiprecision::cpp_rational;

constexpr double kEps = std::numeric_limits<double>::epsilon() / 2;  // 2^-53
// Static error bound for the filtered determinant (Shewchuk, orient3d A-bound).
constexpr double kO3dBound = (7.0 + 56.0 * kEps) * kEps;
constexpr double kSmallInt = 1048576.0;  // 2^20

bool small_integral(double v) { return std::fabs(v) <= kSmallInt && std::nearbyint(v) == v; }

int sign_of(double v) { return (v > 0) - (v < 0); }

template <class T>
int sign_of_t(const T& v) {
  return (v > 0) - (v < 0);
}

// det[u; v; w] with u = a - d, v = b - d, w = c - d.
template <class T>
T det3(const T& ux, const T& uy, const T& uz, const T& vx, const T& vy, const T& vz, const T& wx,
       const T& wy, const T& wz) {
  return ux * (vy * wz - vz * wy) + vx * (wy * uz - wz * uy) + wx * (uy * vz - uz * vy);
}

int orient_exact_shewchuk(Vec3 a, Vec3 b, Vec3 c, Vec3 d) {
  const bool ints = small_integral(a.x) && small_integral(a.y) && small_integral(a.z) &&
                    small_integral(b.x) && small_integral(b.y) && small_integral(b.z) &&
                    small_integral(c.x) && small_integral(c.y) && small_integral(c.z) &&
                    small_integral(d.x) && small_integral(d.y) && small_integral(d.z);
  if (ints) {
    using I = __int128;
    auto I_ = [](double v) { return static_cast<I>(static_cast<long long>(v)); };
    return sign_of_t(det3<I>(I_(a.x) - I_(d.x), I_(a.y) - I_(d.y), I_(a.z) - I_(d.z),
                             I_(b.x) - I_(d.x), I_(b.y) - I_(d.y), I_(b.z) - I_(d.z),
                             I_(c.x) - I_(d.x), I_(c.y) - I_(d.y), I_(c.z) - I_(d.z)));
  }
  auto R = [](double v) { return Rational(v); };
  return sign_of_t(det3<Rational>(R(a.x) - R(d.x), R(a.y) - R(d.y), R(a.z) - R(d.z),
                                  R(b.x) - R(d.x), R(b.y) - R(d.y), R(b.z) - R(d.z),
                                  R(c.x) - R(d.x), R(c.y) - R(d.y), R(c.z) - R(d.z)));
}

// Sign of det[a - d; b - d; c - d].
int orient_shewchuk(Vec3 a, Vec3 b, Vec3 c, Vec3 d) {
  const double adx = a.x - d.x, ady = a.y - d.y, adz = a.z - d.z;
  const double bdx = b.x - d.x, bdy = b.y - d.y, bdz = b.z - d.z;
  const double cdx = c.x - d.x, cdy = c.y - d.y, cdz = c.z - d.z;

  const double bdxcdy = bdx * cdy, cdxbdy = cdx * bdy;
  const double cdxady = cdx * ady, adxcdy = adx * cdy;
  const double adxbdy = adx * bdy, bdxady = bdx * ady;
  const double det = adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy) + cdz * (adxbdy - bdxady);
  const double permanent = (std::fabs(bdxcdy) + std::fabs(cdxbdy)) * std::fabs(adz) +
                           (std::fabs(cdxady) + std::fabs(adxcdy)) * std::fabs(bdz) +
                           (std::fabs(adxbdy) + std::fabs(bdxady)) * std::fabs(cdz);
  const double bound = kO3dBound * permanent;
  if (det > bound || -det > bound) return sign_of(det);
  return orient_exact_shewchuk(a, b, c, d);
}

}  // namespace

int orient3d(Vec3 a, Vec3 b, Vec3 c, Vec3 d) {
  // det[b - a, c - a, d - a] = -det[a - d; b - d; c - d]
  return -orient_shewchuk(a, b, c, d);
}

bool collinear(Vec3 a, Vec3 b, Vec3 c) {
  auto R = [](double v) { return Rational(v); };
  const Rational ux = R(b.x) - R(a.x), uy = R(b.y) - R(a.y), uz = R(b.z) - R(a.z);
  const Rational vx = R(c.x) - R(a.x), vy = R(c.y) - R(a.y), vz = R(c.z) - R(a.z);
  return uy * vz == uz * vy && uz * vx == ux * vz && ux * vy == uy * vx;
}

}  // namespace atriamap
