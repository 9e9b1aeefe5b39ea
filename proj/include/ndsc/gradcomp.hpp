#pragma once

#include <cstddef>
#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndsc/codec.hpp"
#include "ndsc/sources.hpp"
#include "ndsc/tensor.hpp"

namespace ndsc::gradcomp {

enum class CompressorKind { topk, randk, qsgd, coord, vq_separate, vq_distributed, vq_joint, none };

std::string_view kind_name(CompressorKind k);
CompressorKind parse_kind(std::string_view s);

/// k (index, value) pairs of a d-dimensional vector; zero elsewhere.
struct SparseVector {
  std::size_t dim = 0;
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::vector<double> dense() const;
};

/// k largest-magnitude coordinates, ties to the lowest index.
SparseVector topk(std::span<const double> g, std::size_t k);
/// k coordinates uniformly without replacement from the round's stream. No rescaling.
SparseVector randk(std::span<const double> g, std::size_t k, std::uint64_t round_seed);
/// Cyclic block {(t*k + j) mod d : j < k}.
SparseVector coord_sample(std::span<const double> g, std::size_t k, std::uint64_t t);

/// Stochastically rounded s-level quantization scaled by the l2 norm.
struct QsgdVector {
  double norm = 0.0;
  unsigned s = 1;
  std::vector<std::int8_t> sign;
  std::vector<std::uint32_t> level;

  std::vector<double> dense() const;
};
QsgdVector qsgd(std::span<const double> g, unsigned s, std::uint64_t round_seed);

struct CompressorSpec {
  CompressorKind kind = CompressorKind::none;
  std::size_t k = 0;
  unsigned s = 1;
  std::shared_ptr<const codec::CodecModel> model;
  std::uint64_t seed_stream = 0;

  /// Throws ConfigError when the spec does not fit a d-dimensional gradient.
  void validate(std::size_t d) const;
};

/// Uplink bits per round for worker 2.
std::uint64_t bits_cost(const CompressorSpec& spec, std::size_t d);

/// Worker 2's gradient as reconstructed by the server. `g1` is worker 1's
/// gradient (decoder side information for vq_distributed / vq_joint).
std::vector<double> compress_roundtrip(const CompressorSpec& spec, std::span<const double> g2,
                                       std::span<const double> g1, std::size_t round, std::uint64_t run_seed);

enum class ShardSplit { iid, label_skew };

/// Dense input -> hidden (gelu) -> classes, trained with softmax cross-entropy.
struct ClassifierConfig {
  std::size_t input_dim = 64;
  std::size_t hidden = 32;
  std::size_t classes = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  ShardSplit split = ShardSplit::iid;
};

ParamSet init_classifier(const ClassifierConfig& cfg, std::uint64_t seed);
std::size_t classifier_param_count(const ClassifierConfig& cfg);

/// Mean cross-entropy on the given rows and its flattened gradient.
double classifier_gradient(const ParamSet& params, const sources::LabeledData& data,
                           std::span<const std::size_t> rows, std::vector<double>& grad);
double classifier_accuracy(const ParamSet& params, const sources::LabeledData& data);

/// Two fixed worker shards of a training set (row indices).
std::array<std::vector<std::size_t>, 2> make_shards(const ClassifierConfig& cfg, const sources::LabeledData& data);

struct RoundLog {
  std::size_t round = 0;
  std::uint64_t bits = 0;
  std::uint64_t bits_cumulative = 0;
  double loss = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t seed = 0;
};

/// Synchronous two-worker loop: worker 1 sends its gradient uncompressed,
/// worker 2 sends compress(g2); the server applies Adam to the average of g1
/// and the reconstruction. Test accuracy is logged every round.
std::vector<RoundLog> run_distributed_training(const ClassifierConfig& cfg, const sources::LabeledData& train,
                                               const sources::LabeledData& test, const CompressorSpec& spec,
                                               std::size_t rounds, std::uint64_t seed);

/// round,bits_cumulative,loss,test_accuracy,seed
std::string round_log_csv(std::span<const RoundLog> rows, bool header = true);

/// Blob task split into the encoder pre-training half, the harness training
/// half, and a test set.
struct BlobTask {
  sources::LabeledData pre;
  sources::LabeledData train;
  sources::LabeledData test;
};
BlobTask make_blob_task(std::size_t n_train_total, std::size_t n_test, double spread, std::uint64_t task_seed);

}  // namespace ndsc::gradcomp

namespace ndsc::sources {

/// Gradient pairs from `runs` independent uncompressed trainings on `data`
/// (fresh initialization per run). Each step is recorded with probability
/// sample_rate as x = g2, y = g1, aux = [t].
PairDataset gen_gradient_dataset(const gradcomp::ClassifierConfig& cfg, const LabeledData& data, std::size_t runs,
                                 std::size_t steps, double sample_rate, std::uint64_t seed);

}  // namespace ndsc::sources
