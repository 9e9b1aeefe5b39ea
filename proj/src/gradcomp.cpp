#include "ndsc/gradcomp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ndsc/adam.hpp"
#include "ndsc/autodiff.hpp"
#include "ndsc/error.hpp"
#include "ndsc/rng.hpp"

namespace ndsc::gradcomp {

std::string_view kind_name(CompressorKind k) {
  switch (k) {
    case CompressorKind::topk: return "topk";
    case CompressorKind::randk: return "randk";
    case CompressorKind::qsgd: return "qsgd";
    case CompressorKind::coord: return "coord";
    case CompressorKind::vq_separate: return "vq_separate";
    case CompressorKind::vq_distributed: return "vq_distributed";
    case CompressorKind::vq_joint: return "vq_joint";
    case CompressorKind::none: return "none";
  }
  return "unknown";
}

CompressorKind parse_kind(std::string_view s) {
  for (auto k : {CompressorKind::topk, CompressorKind::randk, CompressorKind::qsgd, CompressorKind::coord,
                 CompressorKind::vq_separate, CompressorKind::vq_distributed, CompressorKind::vq_joint,
                 CompressorKind::none})
    if (kind_name(k) == s) return k;
  throw ConfigError("unknown compressor '" + std::string(s) + "'");
}

std::vector<double> SparseVector::dense() const {
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) out[index[i]] = value[i];
  return out;
}

namespace {
void check_k(std::size_t k, std::size_t d) {
  if (k < 1 || k > d) throw ConfigError("k=" + std::to_string(k) + " must lie in [1, " + std::to_string(d) + "]");
}
}  // namespace

SparseVector topk(std::span<const double> g, std::size_t k) {
  check_k(k, g.size());
  std::vector<std::uint32_t> order(g.size());
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      const double ma = std::abs(g[a]), mb = std::abs(g[b]);
                      return ma != mb ? ma > mb : a < b;
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  SparseVector out{g.size(), order, {}};
  for (auto i : order) out.value.push_back(g[i]);
  return out;
}

SparseVector randk(std::span<const double> g, std::size_t k, std::uint64_t round_seed) {
  check_k(k, g.size());
  Rng rng = make_rng(round_seed, 0x7a);
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  std::vector<std::uint32_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, g.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  SparseVector out{g.size(), idx, {}};
  for (auto i : idx) out.value.push_back(g[i]);
  return out;
}

SparseVector coord_sample(std::span<const double> g, std::size_t k, std::uint64_t t) {
  check_k(k, g.size());
  const std::size_t d = g.size();
  SparseVector out{d, {}, {}};
  const std::size_t start = static_cast<std::size_t>((t % d) * (k % d) % d);
  for (std::size_t j = 0; j < k; ++j) {
    const auto i = static_cast<std::uint32_t>((start + j) % d);
    out.index.push_back(i);
    out.value.push_back(g[i]);
  }
  return out;
}

std::vector<double> QsgdVector::dense() const {
  std::vector<double> out(sign.size(), 0.0);
  for (std::size_t i = 0; i < sign.size(); ++i)
    out[i] = norm * static_cast<double>(sign[i]) * static_cast<double>(level[i]) / static_cast<double>(s);
  return out;
}

QsgdVector qsgd(std::span<const double> g, unsigned s, std::uint64_t round_seed) {
  if (s < 1) throw ConfigError("qsgd: s must be >= 1");
  QsgdVector q;
  q.s = s;
  q.sign.assign(g.size(), 0);
  q.level.assign(g.size(), 0);
  double sq = 0.0;
  for (double v : g) sq += v * v;
  q.norm = std::sqrt(sq);
  if (q.norm == 0.0) return q;
  Rng rng = make_rng(round_seed, 0x95);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double r = std::min(static_cast<double>(s), std::abs(g[i]) / q.norm * s);
    const double lower = std::floor(r);
    const double p = r - lower;  // probability of rounding up
    const double draw = u(rng);
    q.level[i] = static_cast<std::uint32_t>(lower) + (draw < p ? 1u : 0u);
    q.sign[i] = static_cast<std::int8_t>(g[i] > 0 ? 1 : (g[i] < 0 ? -1 : 0));
  }
  return q;
}

void CompressorSpec::validate(std::size_t d) const {
  switch (kind) {
    case CompressorKind::topk:
    case CompressorKind::randk:
    case CompressorKind::coord: check_k(k, d); break;
    case CompressorKind::qsgd:
      if (s < 1) throw ConfigError("qsgd needs s >= 1");
      break;
    case CompressorKind::vq_separate:
    case CompressorKind::vq_distributed:
    case CompressorKind::vq_joint: {
      if (!model) throw ConfigError(std::string(kind_name(kind)) + " needs a trained model");
      if (model->config.x_dim != d || model->config.si_dim != d)
        throw ConfigError("model dims (" + std::to_string(model->config.x_dim) + ") do not match gradient dimension " +
                          std::to_string(d));
      const auto want = kind == CompressorKind::vq_separate     ? codec::Variant::separate
                        : kind == CompressorKind::vq_distributed ? codec::Variant::distributed
                                                                 : codec::Variant::joint;
      if (model->config.variant != want)
        throw ConfigError(std::string(kind_name(kind)) + " needs a '" + std::string(codec::variant_name(want)) +
                          "' model, got '" + std::string(codec::variant_name(model->config.variant)) + "'");
      break;
    }
    case CompressorKind::none: break;
  }
}

namespace {
std::uint64_t ceil_log2(std::uint64_t v) {
  std::uint64_t b = 0;
  while ((std::uint64_t{1} << b) < v) ++b;
  return b;
}
}  // namespace

std::uint64_t bits_cost(const CompressorSpec& spec, std::size_t d) {
  switch (spec.kind) {
    case CompressorKind::topk: return spec.k * (ceil_log2(d) + 32);
    case CompressorKind::randk:
    case CompressorKind::coord: return spec.k * 32ull;
    case CompressorKind::qsgd: return 32 + d * (1 + ceil_log2(std::uint64_t{spec.s} + 1));
    case CompressorKind::vq_separate:
    case CompressorKind::vq_distributed:
    case CompressorKind::vq_joint: return codec::rate_bits(spec.model->config);
    case CompressorKind::none: return 32ull * d;
  }
  return 0;
}

std::vector<double> compress_roundtrip(const CompressorSpec& spec, std::span<const double> g2,
                                       std::span<const double> g1, std::size_t round, std::uint64_t run_seed) {
  const std::uint64_t round_seed = mix_seed(run_seed ^ mix_seed(spec.seed_stream + 0x100 + round));
  const double t = static_cast<double>(round);
  auto time = [&]() -> std::optional<double> {
    if (spec.model && spec.model->config.time_conditioned) return t;
    return std::nullopt;
  };
  switch (spec.kind) {
    case CompressorKind::topk: return topk(g2, spec.k).dense();
    case CompressorKind::randk: return randk(g2, spec.k, round_seed).dense();
    case CompressorKind::coord: return coord_sample(g2, spec.k, round).dense();
    case CompressorKind::qsgd: return qsgd(g2, spec.s, round_seed).dense();
    case CompressorKind::vq_separate: {
      const auto m = codec::encode(*spec.model, g2, std::nullopt, time());
      return codec::decode(*spec.model, m, std::nullopt, time());
    }
    case CompressorKind::vq_distributed: {
      const auto m = codec::encode(*spec.model, g2, std::nullopt, time());
      return codec::decode(*spec.model, m, g1, time());
    }
    case CompressorKind::vq_joint: {
      const auto m = codec::encode(*spec.model, g2, g1, time());
      return codec::decode(*spec.model, m, g1, time());
    }
    case CompressorKind::none: return {g2.begin(), g2.end()};
  }
  return {};
}

ParamSet init_classifier(const ClassifierConfig& cfg, std::uint64_t seed) {
  if (cfg.input_dim == 0 || cfg.hidden == 0 || cfg.classes < 2)
    throw ConfigError("classifier needs positive dims and at least two classes");
  ParamSet p;
  Rng rng = make_rng(seed, 0xc1);
  add_affine(p, "l1", cfg.input_dim, cfg.hidden, rng);
  add_affine(p, "l2", cfg.hidden, cfg.classes, rng);
  return p;
}

std::size_t classifier_param_count(const ClassifierConfig& cfg) {
  return cfg.input_dim * cfg.hidden + cfg.hidden + cfg.hidden * cfg.classes + cfg.classes;
}

namespace {
Var classifier_logits(Tape& tape, const Tensor& x) {
  Var h = tape.gelu(tape.dense(tape.constant(x), "l1"));
  return tape.dense(h, "l2");
}

Tensor feature_rows(const sources::LabeledData& data, std::span<const std::size_t> rows) {
  Tensor x({rows.size(), data.dim});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(data.features.data() + rows[i] * data.dim, data.dim, x.ptr() + i * data.dim);
  return x;
}
}  // namespace

double classifier_gradient(const ParamSet& params, const sources::LabeledData& data,
                           std::span<const std::size_t> rows, std::vector<double>& grad) {
  ParamSet work = params;
  Tape tape(&work);
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (auto r : rows) labels.push_back(data.labels[r]);
  Var loss = tape.softmax_cross_entropy(classifier_logits(tape, feature_rows(data, rows)), labels);
  tape.backward(loss);
  grad = work.flat_grads();
  return tape.value(loss)[0];
}

double classifier_accuracy(const ParamSet& params, const sources::LabeledData& data) {
  std::vector<std::size_t> rows(data.n);
  std::iota(rows.begin(), rows.end(), 0);
  Tape tape(params);
  const Tensor& logits = tape.value(classifier_logits(tape, feature_rows(data, rows)));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.n);
}

std::array<std::vector<std::size_t>, 2> make_shards(const ClassifierConfig& cfg, const sources::LabeledData& data) {
  std::array<std::vector<std::size_t>, 2> shards;
  for (std::size_t i = 0; i < data.n; ++i) {
    std::size_t w = i % 2;
    if (cfg.split == ShardSplit::label_skew)
      w = static_cast<std::size_t>(data.labels[i]) < cfg.classes / 2 ? 0 : 1;
    shards[w].push_back(i);
  }
  if (shards[0].empty() || shards[1].empty()) throw DataError("a worker shard is empty");
  return shards;
}

namespace {

using RoundHook = std::function<void(std::size_t round, const std::vector<double>& g1, const std::vector<double>& g2,
                                     double loss, const ParamSet& params)>;

// Shared synchronous loop. `reconstruct` maps (g2, g1, round) to the server's
// view of worker 2's gradient.
void synchronous_loop(const ClassifierConfig& cfg, const sources::LabeledData& train, std::size_t rounds,
                      std::uint64_t seed,
                      const std::function<std::vector<double>(const std::vector<double>&, const std::vector<double>&,
                                                              std::size_t)>& reconstruct,
                      const RoundHook& hook) {
  ParamSet params = init_classifier(cfg, mix_seed(seed ^ 0x1417));
  Adam adam(AdamConfig{cfg.lr});
  const auto shards = make_shards(cfg, train);
  std::array<Rng, 2> sampler{make_rng(seed, 0xa1), make_rng(seed, 0xa2)};
  std::vector<double> g1, g2;
  std::vector<std::size_t> rows(cfg.batch);
  for (std::size_t t = 0; t < rounds; ++t) {
    double losses[2];
    for (std::size_t w = 0; w < 2; ++w) {
      std::uniform_int_distribution<std::size_t> pick(0, shards[w].size() - 1);
      for (auto& r : rows) r = shards[w][pick(sampler[w])];
      losses[w] = classifier_gradient(params, train, rows, w == 0 ? g1 : g2);
    }
    const double loss = 0.5 * (losses[0] + losses[1]);
    if (!std::isfinite(loss)) throw NumericalError("non-finite classifier loss at round " + std::to_string(t));
    const std::vector<double> g2_hat = reconstruct(g2, g1, t);
    std::vector<double> avg(g1.size());
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = 0.5 * (g1[i] + g2_hat[i]);
    for (double v : avg)
      if (!std::isfinite(v)) throw NumericalError("non-finite aggregated gradient at round " + std::to_string(t));
    params.set_flat_grads(avg);
    adam.step(params);
    hook(t, g1, g2, loss, params);
  }
}

}  // namespace

std::vector<RoundLog> run_distributed_training(const ClassifierConfig& cfg, const sources::LabeledData& train,
                                               const sources::LabeledData& test, const CompressorSpec& spec,
                                               std::size_t rounds, std::uint64_t seed) {
  if (train.dim != cfg.input_dim || test.dim != cfg.input_dim)
    throw ConfigError("classification data dimension does not match the classifier input");
  const std::size_t d = classifier_param_count(cfg);
  spec.validate(d);
  const std::uint64_t per_round = bits_cost(spec, d);
  std::vector<RoundLog> logs;
  logs.reserve(rounds);
  std::uint64_t cumulative = 0;
  synchronous_loop(
      cfg, train, rounds, seed,
      [&](const std::vector<double>& g2, const std::vector<double>& g1, std::size_t t) {
        return compress_roundtrip(spec, g2, g1, t, seed);
      },
      [&](std::size_t t, const std::vector<double>&, const std::vector<double>&, double loss, const ParamSet& params) {
        cumulative += per_round;
        logs.push_back({t, per_round, cumulative, loss, classifier_accuracy(params, test), seed});
      });
  return logs;
}

std::string round_log_csv(std::span<const RoundLog> rows, bool header) {
  std::string out = header ? "round,bits_cumulative,loss,test_accuracy,seed\n" : "";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%llu,%.9g,%.9g,%llu\n", r.round, static_cast<unsigned long long>(r.bits_cumulative),
                  r.loss, r.test_accuracy, static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

BlobTask make_blob_task(std::size_t n_train_total, std::size_t n_test, double spread, std::uint64_t task_seed) {
  auto all = sources::gen_blobs(n_train_total, 64, 10, spread, task_seed, mix_seed(task_seed) ^ 0x11);
  auto test = sources::gen_blobs(n_test, 64, 10, spread, task_seed, mix_seed(task_seed) ^ 0x22);
  const std::size_t half = n_train_total / 2;
  return {all.subset(0, half), all.subset(half, n_train_total), std::move(test)};
}

}  // namespace ndsc::gradcomp

namespace ndsc::sources {

PairDataset gen_gradient_dataset(const gradcomp::ClassifierConfig& cfg, const LabeledData& data, std::size_t runs,
                                 std::size_t steps, double sample_rate, std::uint64_t seed) {
  if (runs < 2) throw ConfigError("gen_gradient_dataset: need at least two runs");
  if (steps == 0) throw ConfigError("gen_gradient_dataset: steps must be positive");
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) throw ConfigError("gen_gradient_dataset: sample_rate must be in (0, 1]");
  if (data.dim != cfg.input_dim) throw ConfigError("gen_gradient_dataset: data dimension does not match classifier");
  const std::size_t d = gradcomp::classifier_param_count(cfg);
  PairDataset ds{SourceKind::gradients, seed, 0, d, d, 1, {}, {}, {}};
  for (std::size_t r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = mix_seed(seed ^ mix_seed(r + 1));
    Rng keep = make_rng(run_seed, 0x5a);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    try {
      gradcomp::synchronous_loop(
          cfg, data, steps, run_seed,
          [](const std::vector<double>& g2, const std::vector<double>&, std::size_t) { return g2; },
          [&](std::size_t t, const std::vector<double>& g1, const std::vector<double>& g2, double, const ParamSet&) {
            if (u(keep) >= sample_rate) return;
            for (double v : g2) ds.x.push_back(static_cast<float>(v));
            for (double v : g1) ds.y.push_back(static_cast<float>(v));
            ds.aux.push_back(static_cast<float>(t));
            ++ds.n;
          });
    } catch (const NumericalError& e) {
      throw NumericalError("gradient dataset run " + std::to_string(r) + " diverged: " + e.what());
    }
  }
  if (ds.n == 0) throw DataError("gen_gradient_dataset: sampling kept no steps");
  return ds;
}

}  // namespace ndsc::sources
