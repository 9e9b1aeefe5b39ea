#include "ndsc/classical.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "ndsc/error.hpp"

namespace ndsc::classical {

Bits3 parse_bits(std::string_view s) {
  if (s.size() != 3) throw ConfigError("expected a 3-bit string, got '" + std::string(s) + "'");
  Bits3 v = 0;
  for (char c : s) {
    if (c != '0' && c != '1') throw ConfigError("expected a 3-bit string, got '" + std::string(s) + "'");
    v = static_cast<Bits3>((v << 1) | (c - '0'));
  }
  return v;
}

std::string bits_str(Bits3 v) {
  std::string s(3, '0');
  for (int b = 0; b < 3; ++b) s[b] = ((v >> (2 - b)) & 1) ? '1' : '0';
  return s;
}

int hamming_distance(Bits3 a, Bits3 b) { return std::popcount(static_cast<unsigned>((a ^ b) & 7u)); }

const BinTable& BinTable::standard() {
  static const BinTable table = [] {
    BinTable t{};
    t.bins = {{{0b000, 0b111}, {0b001, 0b110}, {0b010, 0b101}, {0b011, 0b100}}};
    for (int b = 0; b < 4; ++b)
      for (Bits3 v : t.bins[b]) t.bin_of[v] = b;
    return t;
  }();
  return table;
}

int sw_encode(Bits3 x) {
  if (x > 7) throw ConfigError("sw_encode: value " + std::to_string(x) + " is not a 3-bit string");
  return BinTable::standard().bin_of[x];
}

Bits3 sw_decode(int bin, Bits3 y) {
  if (bin < 0 || bin > 3) throw ConfigError("sw_decode: bin " + std::to_string(bin) + " out of range");
  if (y > 7) throw ConfigError("sw_decode: side information is not a 3-bit string");
  const auto& members = BinTable::standard().bins[static_cast<std::size_t>(bin)];
  // Members are at distance 3, so their distances to y have different parity.
  return hamming_distance(members[0], y) < hamming_distance(members[1], y) ? members[0] : members[1];
}

std::vector<SwCase> sw_exhaustive() {
  std::vector<SwCase> cases;
  for (Bits3 x = 0; x < 8; ++x) {
    for (Bits3 flip : {Bits3{0}, Bits3{4}, Bits3{2}, Bits3{1}}) {
      const Bits3 y = x ^ flip;
      const int bin = sw_encode(x);
      const Bits3 dec = sw_decode(bin, y);
      cases.push_back({x, y, bin, dec, dec == x});
    }
  }
  std::sort(cases.begin(), cases.end(), [](const SwCase& a, const SwCase& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  return cases;
}

double rd_gaussian_no_si(double distortion, double var_x) {
  if (!(distortion > 0.0)) throw ConfigError("distortion must be positive");
  if (!(var_x > 0.0)) throw ConfigError("source variance must be positive");
  return std::max(0.0, 0.5 * std::log2(var_x / distortion));
}

double conditional_variance(double var_x, double var_n) {
  if (!(var_x > 0.0) || !(var_n >= 0.0)) throw ConfigError("variances must be positive");
  return var_x * var_n / (var_x + var_n);
}

double rd_gaussian_with_si(double distortion, double var_x, double var_n) {
  if (!(distortion > 0.0)) throw ConfigError("distortion must be positive");
  const double vc = conditional_variance(var_x, var_n);
  if (vc == 0.0) return 0.0;
  return std::max(0.0, 0.5 * std::log2(vc / distortion));
}

std::size_t ScalarQuantizer::cell(double v) const {
  return static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), v) - thresholds.begin());
}

namespace {

// Nearest-center distortion over sorted samples; fills cell boundaries.
double assign(const std::vector<double>& sorted, const std::vector<double>& centers, std::vector<double>& thresholds,
              std::vector<std::size_t>& bounds) {
  const std::size_t k = centers.size();
  thresholds.resize(k - 1);
  for (std::size_t i = 0; i + 1 < k; ++i) thresholds[i] = 0.5 * (centers[i] + centers[i + 1]);
  bounds.assign(k + 1, 0);
  bounds[k] = sorted.size();
  for (std::size_t i = 0; i + 1 < k; ++i)
    bounds[i + 1] = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), thresholds[i]) - sorted.begin());
  double acc = 0.0;
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = bounds[c]; i < bounds[c + 1]; ++i) {
      const double d = sorted[i] - centers[c];
      acc += d * d;
    }
  return acc / static_cast<double>(sorted.size());
}

}  // namespace

ScalarQuantizer lloyd_max(std::span<const double> samples, std::size_t levels, std::size_t iters, double tol) {
  if (levels == 0) throw ConfigError("lloyd_max: levels must be >= 1");
  if (samples.empty()) throw ConfigError("lloyd_max: no samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> uniq(sorted);
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (levels > uniq.size())
    throw ConfigError("lloyd_max: " + std::to_string(levels) + " levels exceed " + std::to_string(uniq.size()) +
                      " distinct samples");

  const std::size_t n = sorted.size();
  ScalarQuantizer q;
  q.centers.resize(levels);
  for (std::size_t c = 0; c < levels; ++c) q.centers[c] = sorted[std::min(n - 1, (2 * c + 1) * n / (2 * levels))];
  // Quantile init can repeat a value when samples cluster; spread over distinct values instead.
  if (std::adjacent_find(q.centers.begin(), q.centers.end()) != q.centers.end())
    for (std::size_t c = 0; c < levels; ++c) q.centers[c] = uniq[(2 * c + 1) * uniq.size() / (2 * levels)];

  std::vector<std::size_t> bounds;
  for (q.iterations = 0; q.iterations < iters; ++q.iterations) {
    q.distortion = assign(sorted, q.centers, q.thresholds, bounds);
    q.distortion_trace.push_back(q.distortion);
    double moved = 0.0;
    for (std::size_t c = 0; c < levels; ++c) {
      if (bounds[c + 1] == bounds[c]) continue;  // empty cell keeps its center
      double acc = 0.0;
      for (std::size_t i = bounds[c]; i < bounds[c + 1]; ++i) acc += sorted[i];
      const double next = acc / static_cast<double>(bounds[c + 1] - bounds[c]);
      moved = std::max(moved, std::abs(next - q.centers[c]));
      q.centers[c] = next;
    }
    if (moved < tol) {
      ++q.iterations;
      break;
    }
  }
  q.distortion = assign(sorted, q.centers, q.thresholds, bounds);
  q.distortion_trace.push_back(q.distortion);
  return q;
}

}  // namespace ndsc::classical
