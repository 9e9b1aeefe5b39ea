#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndsc/tensor.hpp"

namespace ndsc {

enum class SourceKind { gaussian, hamming, split_field, gradients };

std::string_view source_name(SourceKind s);
/// Throws ConfigError for an unknown tag.
SourceKind parse_source(std::string_view tag);

/// i.i.d. (x, y) pairs from a correlated source, stored at file precision.
struct PairDataset {
  SourceKind source = SourceKind::gaussian;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t x_dim = 0;
  std::size_t si_dim = 0;
  std::size_t aux_dim = 0;
  std::vector<float> x;    // n x x_dim
  std::vector<float> y;    // n x si_dim
  std::vector<float> aux;  // n x aux_dim

  std::span<const float> x_row(std::size_t i) const { return {x.data() + i * x_dim, x_dim}; }
  std::span<const float> y_row(std::size_t i) const { return {y.data() + i * si_dim, si_dim}; }
  std::span<const float> aux_row(std::size_t i) const { return {aux.data() + i * aux_dim, aux_dim}; }

  /// Throws DataError when the buffers disagree with the declared dimensions.
  void validate() const;

  friend bool operator==(const PairDataset&, const PairDataset&) = default;
};

/// Gathers rows of a row-major float buffer into a [rows x dim] tensor.
Tensor gather_rows(std::span<const float> data, std::size_t dim, std::span<const std::size_t> rows);
Tensor all_rows(std::span<const float> data, std::size_t n, std::size_t dim);

/// Rows [begin, end) as a new dataset.
PairDataset slice(const PairDataset& ds, std::size_t begin, std::size_t end);

namespace sources {

/// y = x + noise with x ~ N(0,1), noise ~ N(0, sigma_n^2).
PairDataset gen_gaussian(std::size_t n, double sigma_n, std::uint64_t seed);

/// Uniform 3-bit x; y equals x with one of {no flip, flip bit 1, 2, 3}, each
/// with probability 1/4. x and y are stored as three {0,1} reals; aux keeps the
/// two codes as integers 0..7 (bit 1 is the most significant).
PairDataset gen_hamming(std::size_t n, std::uint64_t seed);

/// Smooth random fields on a g x g grid, min-max normalized to [0,1]. x is the
/// top g/2 rows, y the bottom g/2 rows, both flattened row-major.
PairDataset gen_split_field(std::size_t n, std::size_t grid, std::uint64_t seed);

// Dataset file: "NDSD", u16 version, source tag (u32 length + bytes), u64 seed,
// u64 n, u32 x_dim, u32 si_dim, u32 aux_dim, then little-endian float32 x, y,
// aux blocks in row-major order.
inline constexpr std::uint16_t kDatasetVersion = 1;

/// Writes atomically through a temporary file in the same directory.
void dataset_write(const PairDataset& ds, const std::filesystem::path& path);
PairDataset dataset_read(const std::filesystem::path& path);

/// Classification data for the gradient experiments.
struct LabeledData {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // n x dim
  std::vector<int> labels;

  LabeledData subset(std::size_t begin, std::size_t end) const;
};

/// Parse an IDX image/label pair (magic 0x00000803 / 0x00000801), scale pixels to
/// [0,1] and average-pool each image to downsample x downsample.
LabeledData idx_ingest(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::size_t downsample = 8);

/// 10-class Gaussian blobs in `dim` dimensions: class means ~ N(0, spread^2 I),
/// samples = mean + N(0, I).
LabeledData gen_blobs(std::size_t n, std::size_t dim, std::size_t classes, double spread,
                      std::uint64_t task_seed, std::uint64_t sample_seed);

}  // namespace sources
}  // namespace ndsc
