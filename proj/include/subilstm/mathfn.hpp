#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace subi {

// Branch-free exp built from plain arithmetic and bit operations. Every
// element goes through exactly the same instruction sequence whether the
// caller is a scalar loop or a vectorized one, which keeps single-sentence
// and batched encoder paths bit-identical. Relative error < 1e-12.
inline double fexp(double x) {
  constexpr double kLog2E = 1.4426950408889634074;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShift = 6755399441055744.0;  // 1.5 * 2^52

  x = x < -708.0 ? -708.0 : x;
  x = x > 708.0 ? 708.0 : x;

  const double t = x * kLog2E;
  const double rk = t + kShift;
  const double n = rk - kShift;  // nearest integer to t
  const auto ni = static_cast<std::int64_t>(n);

  double r = std::fma(-n, kLn2Hi, x);
  r = std::fma(-n, kLn2Lo, r);

  // Taylor polynomial of degree 10 on |r| <= ln2/2.
  double p = 1.0 / 3628800.0;
  p = std::fma(p, r, 1.0 / 362880.0);
  p = std::fma(p, r, 1.0 / 40320.0);
  p = std::fma(p, r, 1.0 / 5040.0);
  p = std::fma(p, r, 1.0 / 720.0);
  p = std::fma(p, r, 1.0 / 120.0);
  p = std::fma(p, r, 1.0 / 24.0);
  p = std::fma(p, r, 1.0 / 6.0);
  p = std::fma(p, r, 0.5);
  p = std::fma(p, r, 1.0);
  p = std::fma(p, r, 1.0);

  const double scale =
      std::bit_cast<double>(static_cast<std::uint64_t>(ni + 1023) << 52);
  return p * scale;
}

inline double fsigmoid(double x) { return 1.0 / (1.0 + fexp(-x)); }

// tanh(x) = 1 - 2 / (exp(2x) + 1); input clamped where tanh rounds to +-1.
inline double ftanh(double x) {
  x = x < -20.0 ? -20.0 : x;
  x = x > 20.0 ? 20.0 : x;
  return 1.0 - 2.0 / (fexp(2.0 * x) + 1.0);
}

}  // namespace subi
