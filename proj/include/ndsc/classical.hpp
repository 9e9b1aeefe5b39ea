#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Reference results the learned codecs are checked against: the 3-bit binning
// code, quadratic-Gaussian rate-distortion curves, and a Lloyd-Max quantizer.
namespace ndsc::classical {

/// 3-bit string packed into 0..7; the first character is the most significant bit.
using Bits3 = std::uint8_t;

Bits3 parse_bits(std::string_view s);
std::string bits_str(Bits3 v);
int hamming_distance(Bits3 a, Bits3 b);

/// Four bins of two strings at Hamming distance 3:
/// B0={000,111}, B1={001,110}, B2={010,101}, B3={011,100}.
struct BinTable {
  std::array<std::array<Bits3, 2>, 4> bins;
  std::array<int, 8> bin_of;

  static const BinTable& standard();
};

inline constexpr int kSwRateBits = 2;
inline constexpr int kSwRawBits = 3;

int sw_encode(Bits3 x);
/// Bin member closest to y in Hamming distance.
Bits3 sw_decode(int bin, Bits3 y);

struct SwCase {
  Bits3 x;
  Bits3 y;
  int bin;
  Bits3 decoded;
  bool ok;
};

/// All 32 pairs with d(x, y) <= 1, in (x, y) lexicographic order.
std::vector<SwCase> sw_exhaustive();

/// R(D) = max(0, 1/2 log2(var_x / D)) bits/sample. Throws ConfigError for D <= 0.
double rd_gaussian_no_si(double distortion, double var_x);
/// var_x * var_n / (var_x + var_n): residual variance of x given y = x + n.
double conditional_variance(double var_x, double var_n);
/// Wyner-Ziv rate for y = x + n, equal to the conditional rate-distortion function.
double rd_gaussian_with_si(double distortion, double var_x, double var_n);

struct ScalarQuantizer {
  std::vector<double> centers;     // ascending
  std::vector<double> thresholds;  // midpoints between adjacent centers
  double distortion = 0.0;
  std::vector<double> distortion_trace;  // per iteration, non-increasing
  std::size_t iterations = 0;

  std::size_t cell(double v) const;
};

/// Lloyd-Max scalar quantizer initialized at sample quantiles. Iterates until
/// every center moves less than tol or `iters` is reached.
ScalarQuantizer lloyd_max(std::span<const double> samples, std::size_t levels, std::size_t iters, double tol);

}  // namespace ndsc::classical
