// ndsc: command-line driver for data generation, codec training, evaluation
// and the experiment reproductions.

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ndsc/analysis.hpp"
#include "ndsc/classical.hpp"
#include "ndsc/codec.hpp"
#include "ndsc/error.hpp"
#include "ndsc/fileio.hpp"
#include "ndsc/gradcomp.hpp"
#include "ndsc/sources.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ndsc;

namespace {

struct Global {
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
  std::vector<std::string> argv;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Relative dataset paths that do not exist under the working directory are
// looked up under NDSC_DATA_DIR.
fs::path resolve_data(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  if (const char* root = std::getenv("NDSC_DATA_DIR"); root && *root) {
    fs::path alt = fs::path(root) / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

// Same digest git uses for blob objects.
std::string git_blob_sha1(const fs::path& path) {
  const std::string content = read_text(path);
  std::string header = "blob " + std::to_string(content.size());
  header.push_back('\0');
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw DataError("sha1 failed for '" + path.string() + "'");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

struct RunRecord {
  std::string command;
  json config = json::object();
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, fs::path>> inputs;  // (as given, resolved)
  json extra = json::object();
};

void write_run_json(const fs::path& out, const Global& g, const RunRecord& r) {
  json j;
  j["tool"] = "ndsc";
  j["version"] = NDSC_VERSION;
  j["command"] = r.command;
  j["argv"] = g.argv;
  j["config"] = r.config;
  j["seeds"] = r.seeds;
  j["seed_override"] = g.seed ? json(*g.seed) : json(nullptr);
  json inputs = json::array();
  for (const auto& [given, resolved] : r.inputs)
    inputs.push_back({{"path", given}, {"size", fs::file_size(resolved)}, {"git_sha1", git_blob_sha1(resolved)}});
  j["inputs"] = inputs;
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  atomic_write_text(out / "run.json", j.dump(2) + "\n");
}

json load_json(const std::string& p) {
  const fs::path path(p);
  if (!fs::exists(path)) throw ConfigError("config file '" + p + "' not found");
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + p + "': " + e.what());
  }
}

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
void read_field(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    const auto& v = j.at(key);
    if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": '" + key + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": '" + key + "' must be a number");
    }
    dst = v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": '" + key + "': " + e.what());
  }
}

codec::TrainOptions options_from_json(const json& j) {
  codec::TrainOptions o;
  if (j.is_null()) return o;
  check_keys(j, {"epochs", "batch", "lr", "patience", "commitment_beta", "seed"}, "train options");
  read_field(j, "epochs", o.epochs, "train options");
  read_field(j, "batch", o.batch, "train options");
  read_field(j, "lr", o.lr, "train options");
  read_field(j, "patience", o.patience, "train options");
  read_field(j, "commitment_beta", o.commitment_beta, "train options");
  read_field(j, "seed", o.seed, "train options");
  if (o.epochs == 0 || o.batch == 0) throw ConfigError("train options: epochs and batch must be positive");
  if (!(o.lr > 0.0)) throw ConfigError("train options: lr must be positive");
  return o;
}

json options_to_json(const codec::TrainOptions& o) {
  return {{"epochs", o.epochs}, {"batch", o.batch},     {"lr", o.lr},
          {"patience", o.patience}, {"commitment_beta", o.commitment_beta}, {"seed", o.seed}};
}

// {"codec": {...}, "train": {...}}
analysis::SweepEntry entry_from_json(const json& j, const std::string& where) {
  check_keys(j, {"codec", "train"}, where);
  if (!j.contains("codec")) throw ConfigError(where + ": missing 'codec'");
  analysis::SweepEntry e;
  e.config = codec::config_from_json(j.at("codec"));
  e.options = options_from_json(j.contains("train") ? j.at("train") : json());
  return e;
}

json entry_to_json(const analysis::SweepEntry& e) {
  return {{"codec", codec::config_to_json(e.config)}, {"train", options_to_json(e.options)}};
}

std::string loss_log_csv(const codec::TrainResult& r) {
  std::string s = "epoch,train_loss,recon,codebook_loss,commitment_loss,valid_mse,reinit_codes\n";
  for (const auto& e : r.log)
    s += std::to_string(e.epoch) + "," + num(e.train_loss) + "," + num(e.recon) + "," + num(e.codebook_loss) + "," +
         num(e.commitment_loss) + "," + num(e.valid_mse) + "," + std::to_string(e.reinit_codes) + "\n";
  return s;
}

double rms(const std::vector<float>& v) {
  double s = 0.0;
  for (float f : v) s += double(f) * f;
  return v.empty() ? 1.0 : std::sqrt(s / double(v.size()));
}

// Bounded pool, results slotted by index so ordering never depends on timing.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

gradcomp::ShardSplit parse_split(const std::string& s) {
  if (s == "iid") return gradcomp::ShardSplit::iid;
  if (s == "label_skew") return gradcomp::ShardSplit::label_skew;
  throw ConfigError("unknown split '" + s + "' (iid, label_skew)");
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::string source;
  std::size_t n = 10000;
  double sigma_n = 0.1;
  std::size_t grid = 16;
  // gradients
  std::size_t runs = 100;
  std::size_t steps = 500;
  double sample_rate = 0.05;
  double spread = 1.0;
  std::uint64_t task_seed = 7;
  std::size_t n_train = 4000;
  std::string split = "iid";
};

int cmd_gen(const Global& g, const GenArgs& a) {
  const std::uint64_t seed = g.seed.value_or(1);
  const SourceKind kind = parse_source(a.source);
  RunRecord rec{"gen"};
  rec.seeds = {seed};
  rec.config = {{"source", a.source}, {"seed", seed}};
  PairDataset ds;
  switch (kind) {
    case SourceKind::gaussian:
      ds = sources::gen_gaussian(a.n, a.sigma_n, seed);
      rec.config["n"] = a.n;
      rec.config["sigma_n"] = a.sigma_n;
      break;
    case SourceKind::hamming:
      ds = sources::gen_hamming(a.n, seed);
      rec.config["n"] = a.n;
      break;
    case SourceKind::split_field:
      ds = sources::gen_split_field(a.n, a.grid, seed);
      rec.config["n"] = a.n;
      rec.config["grid"] = a.grid;
      break;
    case SourceKind::gradients: {
      gradcomp::ClassifierConfig cc;
      cc.split = parse_split(a.split);
      const auto task = gradcomp::make_blob_task(a.n_train, 1, a.spread, a.task_seed);
      ds = sources::gen_gradient_dataset(cc, task.pre, a.runs, a.steps, a.sample_rate, seed);
      rec.config.update({{"runs", a.runs}, {"steps", a.steps}, {"sample_rate", a.sample_rate}, {"spread", a.spread},
                         {"task_seed", a.task_seed}, {"n_train", a.n_train}, {"split", a.split}});
      break;
    }
  }
  const fs::path out(a.out);
  sources::dataset_write(ds, out / "dataset.ndsd");
  rec.extra["samples"] = ds.n;
  write_run_json(out, g, rec);
  std::cout << "wrote " << (out / "dataset.ndsd").string() << " (" << ds.n << " samples)\n";
  return 0;
}

struct TrainArgs {
  std::string out;
  std::string config;
  std::string train;
  std::string valid;
  double valid_fraction = 0.1;
  bool auto_scale = false;
};

int cmd_train(const Global& g, const TrainArgs& a) {
  analysis::SweepEntry entry = entry_from_json(load_json(a.config), "train config");
  RunRecord rec{"train"};
  const fs::path train_path = resolve_data(a.train);
  rec.inputs.push_back({a.train, train_path});
  PairDataset train_set = sources::dataset_read(train_path);
  PairDataset valid_set;
  if (!a.valid.empty()) {
    const fs::path valid_path = resolve_data(a.valid);
    rec.inputs.push_back({a.valid, valid_path});
    valid_set = sources::dataset_read(valid_path);
  } else {
    if (!(a.valid_fraction > 0.0 && a.valid_fraction < 1.0))
      throw ConfigError("--valid-fraction must lie in (0, 1)");
    const std::size_t nv = std::max<std::size_t>(1, std::size_t(double(train_set.n) * a.valid_fraction));
    if (nv >= train_set.n) throw DataError("training set too small to hold out a validation split");
    valid_set = slice(train_set, train_set.n - nv, train_set.n);
    train_set = slice(train_set, 0, train_set.n - nv);
  }
  if (a.auto_scale) {
    entry.config.x_scale = rms(train_set.x);
    entry.config.si_scale = rms(train_set.y);
    entry.config.validate();
  }
  if (g.seed) entry.options.seed = *g.seed;
  rec.config = entry_to_json(entry);
  rec.seeds = {entry.options.seed};

  const auto result = analysis::train_entry(entry, train_set, valid_set, entry.options.seed);
  const fs::path out(a.out);
  codec::save_model(result.model, out / "model.ndsc");
  atomic_write_text(out / "loss_log.csv", loss_log_csv(result));
  rec.extra["best_epoch"] = result.best_epoch;
  rec.extra["best_valid_mse"] = result.best_valid_mse;
  rec.extra["events"] = result.events;
  write_run_json(out, g, rec);
  std::cout << "best epoch " << result.best_epoch << ", valid mse " << num(result.best_valid_mse) << "\n";
  return 0;
}

struct EvalArgs {
  std::string out;
  std::string model;
  std::string config;
  std::string data;
  std::optional<double> peak;
  std::optional<std::size_t> pixels;
  std::string swap_marginal;
};

int cmd_eval(const Global& g, const EvalArgs& a) {
  if (a.model.empty() == a.config.empty()) throw ConfigError("give exactly one of --model and --config");
  RunRecord rec{"eval"};
  codec::CodecModel model;
  std::uint64_t seed = g.seed.value_or(0);
  if (!a.model.empty()) {
    rec.inputs.push_back({a.model, fs::path(a.model)});
    model = codec::load_model(a.model);
    rec.config["model"] = a.model;
  } else {
    analysis::SweepEntry entry = entry_from_json(load_json(a.config), "eval config");
    if (!g.seed) seed = entry.options.seed;
    model = codec::init_model(entry.config, seed);
    rec.config["untrained"] = codec::config_to_json(entry.config);
  }
  const fs::path data_path = resolve_data(a.data);
  rec.inputs.push_back({a.data, data_path});
  const PairDataset test = sources::dataset_read(data_path);
  analysis::SweepOptions opts;
  opts.peak = a.peak;
  opts.pixel_count = a.pixels;
  rec.config["peak"] = a.peak ? json(*a.peak) : json(nullptr);
  rec.config["pixels"] = a.pixels ? json(*a.pixels) : json(nullptr);
  rec.seeds = {seed};

  const auto point = analysis::evaluate_point(model, test, seed, opts);
  if (!std::isfinite(point.mse)) throw NumericalError("non-finite test MSE");
  const fs::path out(a.out);
  const std::vector<analysis::RDPoint> rows{point};
  atomic_write_text(out / "rd.csv", analysis::rd_csv(rows));

  if (!a.swap_marginal.empty()) {
    const fs::path mpath = resolve_data(a.swap_marginal);
    rec.inputs.push_back({a.swap_marginal, mpath});
    const auto swaps = analysis::si_swap_eval(model, test, sources::dataset_read(mpath), seed);
    std::string csv = "si_mode,mse,std_error\n";
    static const char* names[] = {"true", "shuffled", "random"};
    for (const auto& s : swaps) csv += std::string(names[int(s.mode)]) + "," + num(s.mse) + "," + num(s.std_error) + "\n";
    atomic_write_text(out / "si_swap.csv", csv);
  }
  write_run_json(out, g, rec);
  std::cout << "rate " << point.rate_bits << " bits, mse " << num(point.mse) << "\n";
  return 0;
}

struct SweepArgs {
  std::string out;
  std::string config;
  bool save_models = false;
};

int cmd_rd_sweep(const Global& g, const SweepArgs& a) {
  const json j = load_json(a.config);
  check_keys(j, {"data", "configs", "seeds", "peak", "pixels"}, "sweep config");
  if (!j.contains("data") || !j.contains("configs")) throw ConfigError("sweep config: 'data' and 'configs' are required");
  const json& data = j.at("data");
  check_keys(data, {"train", "valid", "test"}, "sweep config data");
  RunRecord rec{"rd-sweep"};
  auto load = [&](const char* key) {
    if (!data.contains(key) || !data.at(key).is_string()) throw ConfigError(std::string("sweep config data: '") + key + "' must be a path");
    const std::string given = data.at(key).get<std::string>();
    const fs::path p = resolve_data(given);
    rec.inputs.push_back({given, p});
    return sources::dataset_read(p);
  };
  const PairDataset train_set = load("train"), valid_set = load("valid"), test_set = load("test");

  if (!j.at("configs").is_array() || j.at("configs").empty()) throw ConfigError("sweep config: 'configs' must be a non-empty array");
  std::vector<analysis::SweepEntry> entries;
  for (std::size_t i = 0; i < j.at("configs").size(); ++i)
    entries.push_back(entry_from_json(j.at("configs")[i], "sweep config entry " + std::to_string(i)));
  std::vector<std::uint64_t> seeds{1, 2, 3};
  read_field(j, "seeds", seeds, "sweep config");
  if (g.seed) seeds = {*g.seed};
  if (seeds.empty()) throw ConfigError("sweep config: 'seeds' must not be empty");
  analysis::SweepOptions opts;
  opts.jobs = g.jobs;
  if (j.contains("peak")) {
    double p = 0.0;
    read_field(j, "peak", p, "sweep config");
    opts.peak = p;
  }
  if (j.contains("pixels")) {
    std::size_t p = 0;
    read_field(j, "pixels", p, "sweep config");
    opts.pixel_count = p;
  }

  json cfg_echo = j;
  cfg_echo["configs"] = json::array();
  for (const auto& e : entries) cfg_echo["configs"].push_back(entry_to_json(e));
  cfg_echo["seeds"] = seeds;
  rec.config = cfg_echo;
  rec.seeds = seeds;

  const auto sweep = analysis::rd_sweep(train_set, valid_set, test_set, entries, seeds, opts);
  const fs::path out(a.out);
  for (const auto& run : sweep.runs) {
    const std::string stem = "cfg" + std::to_string(run.config_index) + "_seed" + std::to_string(run.seed);
    atomic_write_text(out / "losses" / (stem + ".csv"), loss_log_csv(run.result));
    if (a.save_models) codec::save_model(run.result.model, out / "models" / (stem + ".ndsc"));
  }
  atomic_write_text(out / "rd.csv", analysis::rd_csv(sweep.rows));
  write_run_json(out, g, rec);
  std::cout << analysis::rd_csv(sweep.rows);
  return 0;
}

struct SwArgs {
  std::string out;
};

int cmd_sw_demo(const Global& g, const SwArgs& a) {
  using namespace classical;
  const auto cases = sw_exhaustive();
  std::string csv = "x,y,bin,decoded,status\n";
  std::size_t ok = 0;
  for (const auto& c : cases) {
    csv += bits_str(c.x) + "," + bits_str(c.y) + "," + std::to_string(c.bin) + "," + bits_str(c.decoded) + "," +
           (c.ok ? "OK" : "FAIL") + "\n";
    ok += c.ok;
  }
  std::cout << csv;
  std::cout << ok << "/" << cases.size() << " OK (rate " << kSwRateBits << " bits, uncompressed " << kSwRawBits
            << " bits)\n";
  if (!a.out.empty()) {
    const fs::path out(a.out);
    atomic_write_text(out / "sw_demo.csv", csv);
    RunRecord rec{"sw-demo"};
    rec.config = {{"rate_bits", kSwRateBits}, {"raw_bits", kSwRawBits}};
    write_run_json(out, g, rec);
  }
  if (ok != cases.size()) throw NumericalError("binning decoder failed on " + std::to_string(cases.size() - ok) + " pairs");
  return 0;
}

struct BoundsArgs {
  std::string out;
  std::vector<double> dist;
  double var_x = 1.0;
  double sigma_n = 0.1;
};

int cmd_bounds(const Global& g, const BoundsArgs& a) {
  std::vector<double> dist = a.dist;
  if (dist.empty())
    for (int i = 0; i <= 12; ++i) dist.push_back(a.var_x * std::ldexp(1.0, -i));
  const double var_n = a.sigma_n * a.sigma_n;
  std::string csv = "distortion,rate_no_si,rate_with_si\n";
  for (double d : dist)
    csv += num(d) + "," + num(classical::rd_gaussian_no_si(d, a.var_x)) + "," +
           num(classical::rd_gaussian_with_si(d, a.var_x, var_n)) + "\n";
  const fs::path out(a.out);
  atomic_write_text(out / "bounds.csv", csv);
  RunRecord rec{"bounds"};
  rec.config = {{"distortions", dist}, {"var_x", a.var_x}, {"sigma_n", a.sigma_n},
                {"conditional_variance", classical::conditional_variance(a.var_x, var_n)}};
  write_run_json(out, g, rec);
  std::cout << csv;
  return 0;
}

struct GradArgs {
  std::string out;
  std::string compressor;
  std::size_t k = 0;
  unsigned s = 1;
  std::string model;
  std::size_t rounds = 500;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string split = "iid";
  double spread = 1.0;
  std::uint64_t task_seed = 7;
  std::size_t n_train = 4000;
  std::size_t n_test = 1000;
  std::size_t hidden = 32;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::vector<std::string> idx_train;
  std::vector<std::string> idx_test;
  std::size_t downsample = 8;
};

int cmd_grad_train(const Global& g, const GradArgs& a) {
  RunRecord rec{"grad-train"};
  gradcomp::ClassifierConfig cc;
  cc.split = parse_split(a.split);
  cc.hidden = a.hidden;
  cc.batch = a.batch;
  cc.lr = a.lr;
  sources::LabeledData train_set, test_set;
  json task;
  if (!a.idx_train.empty() || !a.idx_test.empty()) {
    if (a.idx_train.size() != 2 || a.idx_test.size() != 2)
      throw ConfigError("--idx-train and --idx-test each take an image file and a label file");
    std::vector<fs::path> p;
    for (const auto& s : {a.idx_train[0], a.idx_train[1], a.idx_test[0], a.idx_test[1]}) {
      p.push_back(resolve_data(s));
      rec.inputs.push_back({s, p.back()});
    }
    train_set = sources::idx_ingest(p[0], p[1], a.downsample);
    test_set = sources::idx_ingest(p[2], p[3], a.downsample);
    task = {{"kind", "idx"}, {"downsample", a.downsample}};
  } else {
    auto blobs = gradcomp::make_blob_task(a.n_train, a.n_test, a.spread, a.task_seed);
    train_set = std::move(blobs.train);
    test_set = std::move(blobs.test);
    task = {{"kind", "blobs"}, {"spread", a.spread}, {"task_seed", a.task_seed}, {"n_train", a.n_train}, {"n_test", a.n_test}};
  }
  cc.input_dim = train_set.dim;
  const std::size_t d = gradcomp::classifier_param_count(cc);

  gradcomp::CompressorSpec spec;
  spec.kind = gradcomp::parse_kind(a.compressor);
  spec.k = a.k;
  spec.s = a.s;
  if (!a.model.empty()) {
    const fs::path mp = resolve_data(a.model);
    rec.inputs.push_back({a.model, mp});
    spec.model = std::make_shared<const codec::CodecModel>(codec::load_model(mp));
  }
  spec.validate(d);

  std::vector<std::uint64_t> seeds = a.seeds;
  if (g.seed) seeds = {*g.seed};
  if (seeds.empty()) throw ConfigError("--seeds must not be empty");
  rec.seeds = seeds;
  rec.config = {{"compressor", a.compressor}, {"k", a.k}, {"s", a.s}, {"rounds", a.rounds}, {"split", a.split},
                {"hidden", a.hidden}, {"batch", a.batch}, {"lr", a.lr}, {"task", task},
                {"param_count", d}, {"bits_per_round", gradcomp::bits_cost(spec, d)}};

  std::vector<std::vector<gradcomp::RoundLog>> logs(seeds.size());
  parallel_for(seeds.size(), g.jobs, [&](std::size_t i) {
    logs[i] = gradcomp::run_distributed_training(cc, train_set, test_set, spec, a.rounds, seeds[i]);
  });
  std::vector<gradcomp::RoundLog> all;
  for (const auto& l : logs) all.insert(all.end(), l.begin(), l.end());
  const fs::path out(a.out);
  atomic_write_text(out / "rounds.csv", gradcomp::round_log_csv(all));
  write_run_json(out, g, rec);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    std::cout << "seed " << seeds[i] << ": final accuracy " << num(logs[i].back().test_accuracy) << "\n";
  return 0;
}

struct DiversityArgs {
  std::string out;
  std::vector<std::string> models;
  std::string data;
  std::size_t inputs = 256;
  std::size_t pool = analysis::kDiversityPool;
};

int cmd_diversity(const Global& g, const DiversityArgs& a) {
  RunRecord rec{"diversity"};
  const std::uint64_t seed = g.seed.value_or(analysis::kDiversitySeed);
  const fs::path data_path = resolve_data(a.data);
  rec.inputs.push_back({a.data, data_path});
  const PairDataset test = sources::dataset_read(data_path);
  std::vector<analysis::DiversityRow> rows;
  for (const auto& m : a.models) {
    const fs::path mp = resolve_data(m);
    rec.inputs.push_back({m, mp});
    const auto model = codec::load_model(mp);
    rows.push_back({mp.stem().string(), analysis::bin_diversity(model, test, a.inputs, a.pool, seed), a.pool, seed});
  }
  rec.seeds = {seed};
  rec.config = {{"inputs", a.inputs}, {"pool", a.pool}, {"models", a.models}};
  const fs::path out(a.out);
  const std::string csv = analysis::diversity_csv(rows);
  atomic_write_text(out / "diversity.csv", csv);
  write_run_json(out, g, rec);
  std::cout << csv;
  return 0;
}

void report(ErrorKind kind, const std::string& message) {
  json m = message;
  std::cerr << "error: kind=" << kind_name(kind) << " message=" << m.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  Global g;
  for (int i = 1; i < argc; ++i) g.argv.emplace_back(argv[i]);

  CLI::App app{"Learned distributed source coding: datasets, codec training and experiment drivers"};
  app.set_version_flag("--version", std::string("ndsc ") + NDSC_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", g.seed, "Override every seed in the config (recorded in run.json)");
  app.add_option("--jobs", g.jobs, "Worker threads for multi-seed runs (0 = logical cores)");
  std::function<int()> action;

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a correlated-source dataset: scalar Gaussian with noisy side "
                                          "information, the 3-bit Hamming pair, split random fields, or recorded "
                                          "gradient pairs from two-worker training");
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--source", gen.source, "gaussian | hamming | split_field | gradients")->required();
  c_gen->add_option("--n", gen.n, "Sample count");
  c_gen->add_option("--sigma-n", gen.sigma_n, "Side-information noise std (gaussian)");
  c_gen->add_option("--grid", gen.grid, "Field size g (split_field)");
  c_gen->add_option("--runs", gen.runs, "Independent training runs (gradients)");
  c_gen->add_option("--steps", gen.steps, "Steps per run (gradients)");
  c_gen->add_option("--sample-rate", gen.sample_rate, "Fraction of steps recorded (gradients)");
  c_gen->add_option("--spread", gen.spread, "Blob class-mean spread (gradients)");
  c_gen->add_option("--task-seed", gen.task_seed, "Blob task seed (gradients)");
  c_gen->add_option("--n-train", gen.n_train, "Blob training rows; the first half feeds the recorded runs");
  c_gen->add_option("--split", gen.split, "Worker shards: iid | label_skew (gradients)");
  c_gen->callback([&] { action = [&] { return cmd_gen(g, gen); }; });

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train one VQ (or uniform-latent) codec from a JSON config "
                                              "{\"codec\": {...}, \"train\": {...}}; writes model.ndsc and loss_log.csv");
  c_train->add_option("--out", tr.out, "Output directory")->required();
  c_train->add_option("--config", tr.config, "Config JSON")->required();
  c_train->add_option("--train", tr.train, "Training dataset")->required();
  c_train->add_option("--valid", tr.valid, "Validation dataset (default: tail of the training set)");
  c_train->add_option("--valid-fraction", tr.valid_fraction, "Held-out fraction when --valid is absent");
  c_train->add_flag("--auto-scale", tr.auto_scale, "Set x_scale/si_scale to the RMS of the training data");
  c_train->callback([&] { action = [&] { return cmd_train(g, tr); }; });

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a model on a dataset: one rate-distortion row, and "
                                            "optionally the true/shuffled/random side-information comparison");
  c_eval->add_option("--out", ev.out, "Output directory")->required();
  c_eval->add_option("--model", ev.model, "Trained model file");
  c_eval->add_option("--config", ev.config, "Config JSON for an untrained model");
  c_eval->add_option("--data", ev.data, "Test dataset")->required();
  c_eval->add_option("--peak", ev.peak, "Peak value for PSNR");
  c_eval->add_option("--pixels", ev.pixels, "Pixels per sample for bpp");
  c_eval->add_option("--swap-marginal", ev.swap_marginal, "Independent dataset supplying random side information");
  c_eval->callback([&] { action = [&] { return cmd_eval(g, ev); }; });

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("rd-sweep", "Rate-distortion sweep over codec configs and seeds: distributed "
                                                 "vs joint vs separate, and learned vs uniform quantization");
  c_sweep->add_option("--out", sw.out, "Output directory")->required();
  c_sweep->add_option("--config", sw.config, "Sweep JSON with data, configs, seeds, peak, pixels")->required();
  c_sweep->add_flag("--save-models", sw.save_models, "Also write every trained model");
  c_sweep->callback([&] { action = [&] { return cmd_rd_sweep(g, sw); }; });

  SwArgs sd;
  auto* c_sw = app.add_subcommand("sw-demo", "Exhaustive check of the 3-bit binning code: every pair at Hamming "
                                             "distance <= 1 decodes exactly from 2 bits plus side information");
  c_sw->add_option("--out", sd.out, "Optional output directory");
  c_sw->callback([&] { action = [&] { return cmd_sw_demo(g, sd); }; });

  BoundsArgs bd;
  auto* c_bounds = app.add_subcommand("bounds", "Gaussian rate-distortion curves with and without decoder side "
                                                "information y = x + n");
  c_bounds->add_option("--out", bd.out, "Output directory")->required();
  c_bounds->add_option("--dist", bd.dist, "Distortions (default: var-x halved 12 times)")->delimiter(',');
  c_bounds->add_option("--var-x", bd.var_x, "Source variance");
  c_bounds->add_option("--sigma-n", bd.sigma_n, "Side-information noise std");
  c_bounds->callback([&] { action = [&] { return cmd_bounds(g, bd); }; });

  GradArgs gr;
  auto* c_grad = app.add_subcommand("grad-train", "Two-worker synchronous training with worker 2's gradient "
                                                  "compressed; logs accuracy against cumulative uplink bits");
  c_grad->add_option("--out", gr.out, "Output directory")->required();
  c_grad->add_option("--compressor", gr.compressor,
                     "topk | randk | qsgd | coord | vq_separate | vq_distributed | vq_joint | none")->required();
  c_grad->add_option("--k", gr.k, "Kept coordinates (topk, randk, coord)");
  c_grad->add_option("--s", gr.s, "Quantization levels (qsgd)");
  c_grad->add_option("--model", gr.model, "Gradient codec model (vq kinds)");
  c_grad->add_option("--rounds", gr.rounds, "Synchronous rounds");
  c_grad->add_option("--seeds", gr.seeds, "Run seeds")->delimiter(',');
  c_grad->add_option("--split", gr.split, "iid | label_skew");
  c_grad->add_option("--spread", gr.spread, "Blob class-mean spread");
  c_grad->add_option("--task-seed", gr.task_seed, "Blob task seed");
  c_grad->add_option("--n-train", gr.n_train, "Blob rows before halving; the second half trains");
  c_grad->add_option("--n-test", gr.n_test, "Blob test rows");
  c_grad->add_option("--hidden", gr.hidden, "Classifier hidden width");
  c_grad->add_option("--batch", gr.batch, "Per-worker batch");
  c_grad->add_option("--lr", gr.lr, "Adam learning rate");
  c_grad->add_option("--idx-train", gr.idx_train, "IDX images,labels for training")->delimiter(',');
  c_grad->add_option("--idx-test", gr.idx_test, "IDX images,labels for testing")->delimiter(',');
  c_grad->add_option("--downsample", gr.downsample, "IDX average-pool output size");
  c_grad->callback([&] { action = [&] { return cmd_grad_train(g, gr); }; });

  DiversityArgs dv;
  auto* c_div = app.add_subcommand("diversity", "Bin diversity: spread of decodings of one message under a pool "
                                                "of side-information rows, per model");
  c_div->add_option("--out", dv.out, "Output directory")->required();
  c_div->add_option("--model", dv.models, "Model files")->required()->delimiter(',');
  c_div->add_option("--data", dv.data, "Test dataset")->required();
  c_div->add_option("--inputs", dv.inputs, "Test rows averaged over");
  c_div->add_option("--pool", dv.pool, "Side-information pool size");
  c_div->callback([&] { action = [&] { return cmd_diversity(g, dv); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report(ErrorKind::config, e.what());
    return static_cast<int>(ErrorKind::config);
  }

  try {
    return action();
  } catch (const Error& e) {
    report(e.kind(), e.what());
    return e.exit_code();
  } catch (const json::exception& e) {
    report(ErrorKind::config, e.what());
    return static_cast<int>(ErrorKind::config);
  } catch (const fs::filesystem_error& e) {
    report(ErrorKind::data, e.what());
    return static_cast<int>(ErrorKind::data);
  } catch (const std::exception& e) {
    std::cerr << "error: kind=internal message=" << json(std::string(e.what())).dump() << "\n";
    return 1;
  }
}
