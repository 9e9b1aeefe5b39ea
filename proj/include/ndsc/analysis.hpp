#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ndsc/codec.hpp"
#include "ndsc/sources.hpp"

namespace ndsc::analysis {

double mse(std::span<const double> a, std::span<const double> b);
double mse(const Tensor& a, const Tensor& b);

struct Psnr {
  double db = 0.0;
  bool infinite = false;
};
/// 10 log10(peak^2 / mse); mse == 0 gives the infinite flag.
Psnr psnr(double mse, double peak);
double bpp(std::uint64_t rate_bits, std::size_t pixel_count);

struct RDPoint {
  std::uint64_t rate_bits = 0;
  std::optional<double> bpp;
  double mse = 0.0;
  std::optional<Psnr> psnr;
  std::string variant;
  std::optional<std::uint64_t> seed;  // empty on the mean-over-seeds row
};

/// rate_bits,bpp,mse,psnr_db,variant,seed
std::string rd_csv(std::span<const RDPoint> rows, bool header = true);

struct SweepEntry {
  codec::CodecConfig config;
  codec::TrainOptions options;
};

struct SweepOptions {
  std::size_t jobs = 0;                  // 0 = hardware concurrency
  std::optional<double> peak;            // PSNR only for bounded sources
  std::optional<std::size_t> pixel_count;
};

struct SweepRun {
  std::size_t config_index = 0;
  std::uint64_t seed = 0;
  codec::TrainResult result;
  RDPoint point;
};

struct Sweep {
  std::vector<SweepRun> runs;  // ordered by (config index, seed)
  std::vector<RDPoint> rows;   // per config: one row per seed, then the mean row
};

/// Trains every (entry, seed) pair and evaluates test MSE with true SI.
/// Uniform-quantizer entries go through the uniform autoencoder trainer.
Sweep rd_sweep(const PairDataset& train, const PairDataset& valid, const PairDataset& test,
               std::span<const SweepEntry> entries, std::span<const std::uint64_t> seeds,
               const SweepOptions& opts = {});

/// Trains one entry under one seed (the seed overrides entry.options.seed).
codec::TrainResult train_entry(const SweepEntry& entry, const PairDataset& train,
                               const PairDataset& valid, std::uint64_t seed);

RDPoint evaluate_point(const codec::CodecModel& model, const PairDataset& test, std::optional<std::uint64_t> seed,
                       const SweepOptions& opts = {});

/// Mean over inputs of the mean pairwise l2 distance between decodings of
/// encode(x) under each SI row of `pool`.
double bin_diversity(const codec::CodecModel& model, const Tensor& inputs, const Tensor& pool,
                     const std::vector<double>* t = nullptr);

inline constexpr std::size_t kDiversityPool = 16;
inline constexpr std::uint64_t kDiversitySeed = 0xd1e5;

/// Diversity over `n_inputs` test rows with a pool of SI rows drawn from the
/// same set by a fixed seed.
double bin_diversity(const codec::CodecModel& model, const PairDataset& test, std::size_t n_inputs,
                     std::size_t pool_size = kDiversityPool, std::uint64_t seed = kDiversitySeed);

struct DiversityRow {
  std::string model;
  double diversity_l2 = 0.0;
  std::size_t pool_size = 0;
  std::uint64_t seed = 0;
};
/// model,diversity_l2,pool_size,seed
std::string diversity_csv(std::span<const DiversityRow> rows, bool header = true);

enum class SwapMode { true_si, shuffled, random };

struct SwapResult {
  SwapMode mode = SwapMode::true_si;
  double mse = 0.0;
  double std_error = 0.0;  // of the per-sample MSE mean
};

/// Decodes each test message with its own SI, another sample's SI (a random
/// derangement), and a fresh SI draw taken from `marginal`, an independent
/// sample of the same source.
std::vector<SwapResult> si_swap_eval(const codec::CodecModel& model, const PairDataset& test,
                                     const PairDataset& marginal, std::uint64_t seed);

}  // namespace ndsc::analysis
