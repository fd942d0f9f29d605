#pragma once

// Branch-free exp, tanh and sigmoid that the compiler can vectorize. Results
// are within a few ulp of the libm functions and identical on every call.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>

namespace scribeid::vmath {

inline double exp(double x) {
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;  // 32 significant bits
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShifter = 0x1.8p52;
  const double xc = std::min(std::max(x, -708.0), 709.782712893384);
  const double t = xc * kLog2e + kShifter;
  const double k = t - kShifter;
  const double r = (xc - k * kLn2Hi) - k * kLn2Lo;
  // Taylor polynomial of degree 13 on |r| <= ln2 / 2.
  double p = 1.0 / 6227020800.0;
  p = p * r + 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const std::int64_t ki = std::bit_cast<std::int64_t>(t) - std::bit_cast<std::int64_t>(kShifter);
  // 2^k as 2 * 2^(k-1) so that k = 1024 stays representable.
  const double v = p * std::bit_cast<double>((ki + 1022) << 52) * 2.0;
  const double under = x < -708.0 ? 0.0 : v;
  return x > 709.782712893384 ? std::numeric_limits<double>::infinity() : under;
}

inline double tanh(double x) {
  const double a = std::abs(x);
  // Odd series near zero, where 1 - 2 / (e + 1) would cancel.
  const double a2 = a * a;
  double s = -929569.0 / 638512875.0;
  s = s * a2 + 21844.0 / 6081075.0;
  s = s * a2 - 1382.0 / 155925.0;
  s = s * a2 + 62.0 / 2835.0;
  s = s * a2 - 17.0 / 315.0;
  s = s * a2 + 2.0 / 15.0;
  s = s * a2 - 1.0 / 3.0;
  const double small = a + a * a2 * s;
  const double large = 1.0 - 2.0 / (vmath::exp(2.0 * a) + 1.0);
  const double y = a < 0.125 ? small : large;
  return x < 0.0 ? -y : y;
}

inline double sigmoid(double x) {
  const double z = vmath::exp(-std::abs(x));
  const double s = 1.0 / (1.0 + z);
  return x >= 0.0 ? s : z * s;
}

}  // namespace scribeid::vmath
