#include "ndsc/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include "ndsc/error.hpp"
#include "ndsc/rng.hpp"

namespace ndsc::analysis {

double mse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("mse: size mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw ConfigError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ConfigError("mse: shape mismatch");
  return mse(a.data(), b.data());
}

Psnr psnr(double m, double peak) {
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
  if (m < 0.0 || !std::isfinite(m)) throw NumericalError("psnr: invalid mse");
  if (m == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(peak * peak / m), false};
}

double bpp(std::uint64_t rate_bits, std::size_t pixel_count) {
  if (pixel_count == 0) throw ConfigError("bpp: pixel count must be positive");
  return static_cast<double>(rate_bits) / static_cast<double>(pixel_count);
}

std::string rd_csv(std::span<const RDPoint> rows, bool header) {
  std::string out = header ? "rate_bits,bpp,mse,psnr_db,variant,seed\n" : "";
  char buf[64];
  for (const auto& r : rows) {
    out += std::to_string(r.rate_bits) + ",";
    if (r.bpp) {
      std::snprintf(buf, sizeof buf, "%.9g", *r.bpp);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.9g,", r.mse);
    out += buf;
    if (r.psnr) {
      if (r.psnr->infinite) {
        out += "inf";
      } else {
        std::snprintf(buf, sizeof buf, "%.9g", r.psnr->db);
        out += buf;
      }
    }
    out += "," + r.variant + ",";
    out += r.seed ? std::to_string(*r.seed) : std::string("mean");
    out += "\n";
  }
  return out;
}

codec::TrainResult train_entry(const SweepEntry& entry, const PairDataset& train,
                               const PairDataset& valid, std::uint64_t seed) {
  codec::TrainOptions opts = entry.options;
  opts.seed = seed;
  if (entry.config.quantizer == codec::QuantizerKind::uniform)
    return codec::uniform_ae_train(entry.config, entry.config.levels, entry.config.lo, entry.config.hi, train, valid,
                                   opts);
  return codec::train(entry.config, train, valid, opts);
}

namespace {
std::string point_label(const codec::CodecConfig& cfg) {
  std::string s(codec::variant_name(cfg.variant));
  if (cfg.quantizer == codec::QuantizerKind::uniform) s += "_uniform";
  return s;
}
}  // namespace

RDPoint evaluate_point(const codec::CodecModel& model, const PairDataset& test,
                       std::optional<std::uint64_t> seed, const SweepOptions& opts) {
  RDPoint p;
  p.rate_bits = codec::rate_bits(model.config);
  if (opts.pixel_count) p.bpp = bpp(p.rate_bits, *opts.pixel_count);
  p.mse = codec::evaluate_mse(model, test);
  if (opts.peak) p.psnr = psnr(p.mse, *opts.peak);
  p.variant = point_label(model.config);
  p.seed = seed;
  return p;
}

Sweep rd_sweep(const PairDataset& train, const PairDataset& valid, const PairDataset& test,
               std::span<const SweepEntry> entries, std::span<const std::uint64_t> seeds, const SweepOptions& opts) {
  if (entries.empty() || seeds.empty()) throw ConfigError("rd_sweep: need at least one config and one seed");
  for (const auto& e : entries) {
    if (e.config.x_dim != train.x_dim || e.config.si_dim != train.si_dim)
      throw ConfigError("rd_sweep: config dims (" + std::to_string(e.config.x_dim) + ", " +
                        std::to_string(e.config.si_dim) + ") do not match dataset (" + std::to_string(train.x_dim) +
                        ", " + std::to_string(train.si_dim) + ")");
    e.config.validate();
  }
  const std::size_t total = entries.size() * seeds.size();
  std::vector<std::optional<SweepRun>> slots(total);
  std::vector<std::exception_ptr> errors(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job; (job = next.fetch_add(1)) < total;) {
      const std::size_t ci = job / seeds.size();
      const std::uint64_t seed = seeds[job % seeds.size()];
      try {
        auto result = train_entry(entries[ci], train, valid, seed);
        RDPoint point = evaluate_point(result.model, test, seed, opts);
        slots[job] = SweepRun{ci, seed, std::move(result), std::move(point)};
      } catch (...) {
        errors[job] = std::current_exception();
      }
    }
  };
  std::size_t jobs = opts.jobs ? opts.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, total);
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < jobs; ++i) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Sweep out;
  for (std::size_t ci = 0; ci < entries.size(); ++ci) {
    RDPoint mean;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      SweepRun& run = *slots[ci * seeds.size() + si];
      out.rows.push_back(run.point);
      mean.mse += run.point.mse;
      mean.rate_bits = run.point.rate_bits;
      mean.bpp = run.point.bpp;
      mean.variant = run.point.variant;
      out.runs.push_back(std::move(run));
    }
    mean.mse /= static_cast<double>(seeds.size());
    if (opts.peak) mean.psnr = psnr(mean.mse, *opts.peak);
    out.rows.push_back(mean);
  }
  return out;
}

double bin_diversity(const codec::CodecModel& model, const Tensor& inputs, const Tensor& pool,
                     const std::vector<double>* t) {
  const auto& cfg = model.config;
  if (inputs.rank() != 2 || inputs.cols() != cfg.x_dim) throw ConfigError("bin_diversity: inputs must be [n x x_dim]");
  if (pool.rank() != 2 || pool.cols() != cfg.si_dim) throw ConfigError("bin_diversity: pool must be [m x si_dim]");
  if (codec::encoder_uses_si(cfg.variant)) throw ConfigError("bin_diversity: encoder must not use side information");
  const std::size_t m = pool.rows();
  if (m < 2) throw ConfigError("bin_diversity: need at least two SI rows");
  if (cfg.time_conditioned && (!t || t->size() != inputs.rows()))
    throw ConfigError("bin_diversity: time-conditioned model needs one time step per input");

  codec::Conditioning enc_cond;
  if (cfg.time_conditioned) enc_cond.t = t;
  const auto messages = codec::encode_batch(model, inputs, enc_cond);

  double total = 0.0;
  std::vector<codec::Message> repeated(m);
  std::vector<double> dec_t;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    std::fill(repeated.begin(), repeated.end(), messages[i]);
    codec::Conditioning cond;
    cond.si = &pool;
    if (cfg.time_conditioned) {
      dec_t.assign(m, (*t)[i]);
      cond.t = &dec_t;
    }
    const Tensor dec = codec::decode_batch(model, repeated, cond);
    double sum = 0.0;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) {
        double sq = 0.0;
        for (std::size_t d = 0; d < dec.cols(); ++d) {
          const double diff = dec(a, d) - dec(b, d);
          sq += diff * diff;
        }
        sum += std::sqrt(sq);
      }
    total += sum / static_cast<double>(m * (m - 1) / 2);
  }
  return total / static_cast<double>(inputs.rows());
}

double bin_diversity(const codec::CodecModel& model, const PairDataset& test, std::size_t n_inputs,
                     std::size_t pool_size, std::uint64_t seed) {
  if (n_inputs == 0 || n_inputs > test.n) throw ConfigError("bin_diversity: n_inputs must be in [1, n]");
  if (pool_size < 2 || pool_size > test.n) throw ConfigError("bin_diversity: pool size must be in [2, n]");
  Rng rng = make_rng(seed, 0xd7);
  std::vector<std::size_t> order(test.n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> pool_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool_size));
  std::vector<std::size_t> input_rows(n_inputs);
  std::iota(input_rows.begin(), input_rows.end(), 0);
  const auto inputs = codec::batch_inputs(model.config, test, input_rows);
  const Tensor pool = gather_rows(test.y, test.si_dim, pool_rows);
  return bin_diversity(model, inputs.x, pool, model.config.time_conditioned ? &inputs.t : nullptr);
}

std::string diversity_csv(std::span<const DiversityRow> rows, bool header) {
  std::string out = header ? "model,diversity_l2,pool_size,seed\n" : "";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g", r.diversity_l2);
    out += r.model + "," + buf + "," + std::to_string(r.pool_size) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<SwapResult> si_swap_eval(const codec::CodecModel& model, const PairDataset& test,
                                     const PairDataset& marginal, std::uint64_t seed) {
  const auto& cfg = model.config;
  if (test.n < 2) throw ConfigError("si_swap_eval: need at least two test samples");
  if (marginal.n == 0 || marginal.si_dim != test.si_dim) throw ConfigError("si_swap_eval: marginal set must match SI dims");
  if (codec::encoder_uses_si(cfg.variant)) throw ConfigError("si_swap_eval: encoder must not use side information");

  std::vector<std::size_t> rows(test.n);
  std::iota(rows.begin(), rows.end(), 0);
  const auto in = codec::batch_inputs(cfg, test, rows);
  codec::Conditioning enc_cond;
  if (cfg.time_conditioned) enc_cond.t = &in.t;
  const auto messages = codec::encode_batch(model, in.x, enc_cond);

  Rng rng = make_rng(seed, 0x5e);
  // Random derangement: shuffle then rotate by one.
  std::vector<std::size_t> perm(test.n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> shuffled(test.n);
  for (std::size_t i = 0; i < test.n; ++i) shuffled[perm[i]] = perm[(i + 1) % test.n];
  std::uniform_int_distribution<std::size_t> pick(0, marginal.n - 1);
  std::vector<std::size_t> fresh(test.n);
  for (auto& r : fresh) r = pick(rng);

  std::vector<SwapResult> out;
  for (auto mode : {SwapMode::true_si, SwapMode::shuffled, SwapMode::random}) {
    Tensor si = mode == SwapMode::true_si    ? in.si
                : mode == SwapMode::shuffled ? gather_rows(test.y, test.si_dim, shuffled)
                                             : gather_rows(marginal.y, marginal.si_dim, fresh);
    codec::Conditioning cond;
    cond.si = &si;
    if (cfg.time_conditioned) cond.t = &in.t;
    const Tensor dec = codec::decode_batch(model, messages, cond);
    std::vector<double> per(test.n, 0.0);
    for (std::size_t i = 0; i < test.n; ++i) {
      for (std::size_t d = 0; d < cfg.x_dim; ++d) {
        const double diff = dec(i, d) - static_cast<double>(test.x[i * test.x_dim + d]);
        per[i] += diff * diff;
      }
      per[i] /= static_cast<double>(cfg.x_dim);
    }
    const double mean = std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(test.n);
    double var = 0.0;
    for (double v : per) var += (v - mean) * (v - mean);
    var /= static_cast<double>(test.n - 1);
    out.push_back({mode, mean, std::sqrt(var / static_cast<double>(test.n))});
  }
  return out;
}

}  // namespace ndsc::analysis
