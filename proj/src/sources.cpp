#include "ndsc/sources.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "ndsc/binio.hpp"
#include "ndsc/error.hpp"
#include "ndsc/fileio.hpp"
#include "ndsc/rng.hpp"

namespace ndsc {

std::string_view source_name(SourceKind s) {
  switch (s) {
    case SourceKind::gaussian: return "gaussian";
    case SourceKind::hamming: return "hamming";
    case SourceKind::split_field: return "split_field";
    case SourceKind::gradients: return "gradients";
  }
  return "unknown";
}

SourceKind parse_source(std::string_view tag) {
  for (auto s : {SourceKind::gaussian, SourceKind::hamming, SourceKind::split_field, SourceKind::gradients})
    if (source_name(s) == tag) return s;
  throw ConfigError("unknown source '" + std::string(tag) + "' (gaussian|hamming|split_field|gradients)");
}

void PairDataset::validate() const {
  if (x.size() != n * x_dim || y.size() != n * si_dim || aux.size() != n * aux_dim)
    throw DataError("dataset buffers do not match n=" + std::to_string(n) + ", x_dim=" + std::to_string(x_dim) +
                    ", si_dim=" + std::to_string(si_dim) + ", aux_dim=" + std::to_string(aux_dim));
}

Tensor gather_rows(std::span<const float> data, std::size_t dim, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float* src = data.data() + rows[i] * dim;
    for (std::size_t j = 0; j < dim; ++j) out(i, j) = src[j];
  }
  return out;
}

Tensor all_rows(std::span<const float> data, std::size_t n, std::size_t dim) {
  Tensor out({n, dim});
  for (std::size_t i = 0; i < n * dim; ++i) out[i] = data[i];
  return out;
}

PairDataset slice(const PairDataset& ds, std::size_t begin, std::size_t end) {
  if (begin > end || end > ds.n) throw ConfigError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range");
  PairDataset out = ds;
  out.n = end - begin;
  out.x.assign(ds.x.begin() + begin * ds.x_dim, ds.x.begin() + end * ds.x_dim);
  out.y.assign(ds.y.begin() + begin * ds.si_dim, ds.y.begin() + end * ds.si_dim);
  out.aux.assign(ds.aux.begin() + begin * ds.aux_dim, ds.aux.begin() + end * ds.aux_dim);
  return out;
}

namespace sources {

PairDataset gen_gaussian(std::size_t n, double sigma_n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("gen_gaussian: n must be positive");
  if (!(sigma_n >= 0.0)) throw ConfigError("gen_gaussian: sigma_n must be non-negative");
  PairDataset ds{SourceKind::gaussian, seed, n, 1, 1, 0, {}, {}, {}};
  ds.x.resize(n);
  ds.y.resize(n);
  Rng rng = make_rng(seed, 0x6a);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = nd(rng);
    const double noise = nd(rng);
    ds.x[i] = static_cast<float>(x);
    ds.y[i] = static_cast<float>(x + sigma_n * noise);
  }
  return ds;
}

PairDataset gen_hamming(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("gen_hamming: n must be positive");
  PairDataset ds{SourceKind::hamming, seed, n, 3, 3, 2, {}, {}, {}};
  ds.x.resize(3 * n);
  ds.y.resize(3 * n);
  ds.aux.resize(2 * n);
  Rng rng = make_rng(seed, 0x4d);
  std::uniform_int_distribution<int> code(0, 7);
  std::uniform_int_distribution<int> perturb(0, 3);
  static constexpr int kFlip[4] = {0, 4, 2, 1};
  for (std::size_t i = 0; i < n; ++i) {
    const int x = code(rng);
    const int y = x ^ kFlip[perturb(rng)];
    for (int b = 0; b < 3; ++b) {
      ds.x[3 * i + b] = static_cast<float>((x >> (2 - b)) & 1);
      ds.y[3 * i + b] = static_cast<float>((y >> (2 - b)) & 1);
    }
    ds.aux[2 * i] = static_cast<float>(x);
    ds.aux[2 * i + 1] = static_cast<float>(y);
  }
  return ds;
}

PairDataset gen_split_field(std::size_t n, std::size_t grid, std::uint64_t seed) {
  if (n == 0) throw ConfigError("gen_split_field: n must be positive");
  if (grid < 8 || grid % 2 != 0) throw ConfigError("gen_split_field: grid must be even and >= 8");
  constexpr int kWaves = 4;
  constexpr double kNoise = 0.05;
  const std::size_t half = grid / 2 * grid;
  PairDataset ds{SourceKind::split_field, seed, n, half, half, 0, {}, {}, {}};
  ds.x.resize(n * half);
  ds.y.resize(n * half);
  Rng rng = make_rng(seed, 0x5f);
  const double g = static_cast<double>(grid);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<double> wavelength(g / 2.0, 2.0 * g);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amplitude(0.5, 1.0);
  std::normal_distribution<double> noise(0.0, kNoise);
  std::vector<double> field(grid * grid);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(field.begin(), field.end(), 0.0);
    for (int w = 0; w < kWaves; ++w) {
      const double th = angle(rng), lam = wavelength(rng), ph = phase(rng), a = amplitude(rng);
      const double kx = 2.0 * std::numbers::pi * std::cos(th) / lam;
      const double ky = 2.0 * std::numbers::pi * std::sin(th) / lam;
      for (std::size_t r = 0; r < grid; ++r)
        for (std::size_t c = 0; c < grid; ++c)
          field[r * grid + c] += a * std::sin(kx * static_cast<double>(c) + ky * static_cast<double>(r) + ph);
    }
    for (auto& v : field) v += noise(rng);
    const auto [mn, mx] = std::minmax_element(field.begin(), field.end());
    const double lo = *mn, span = *mx - *mn;
    for (std::size_t p = 0; p < grid * grid; ++p) {
      const double v = span > 0.0 ? (field[p] - lo) / span : 0.5;
      const float f = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
      if (p < half) ds.x[i * half + p] = f;
      else ds.y[i * half + p - half] = f;
    }
  }
  return ds;
}

void dataset_write(const PairDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  atomic_write(path, [&](std::ostream& out) {
    out.write("NDSD", 4);
    binio::put_le<std::uint16_t>(out, kDatasetVersion);
    binio::put_string(out, std::string(source_name(ds.source)));
    binio::put_le<std::uint64_t>(out, ds.seed);
    binio::put_le<std::uint64_t>(out, ds.n);
    binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.x_dim));
    binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.si_dim));
    binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.aux_dim));
    for (float v : ds.x) binio::put_f32(out, v);
    for (float v : ds.y) binio::put_f32(out, v);
    for (float v : ds.aux) binio::put_f32(out, v);
  });
}

PairDataset dataset_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file '" + path.string() + "'");
  char magic[4];
  binio::read_exact(in, magic, 4, "dataset magic");
  if (std::string(magic, 4) != "NDSD")
    throw DataError("'" + path.string() + "' is not a dataset file: expected magic \"NDSD\" at byte offset 0");
  const auto version = binio::get_le<std::uint16_t>(in, "dataset version");
  if (version > kDatasetVersion)
    throw DataError("dataset format version " + std::to_string(version) + " is newer than supported version " +
                    std::to_string(kDatasetVersion));
  if (version == 0) throw DataError("dataset format version 0 is invalid");
  PairDataset ds;
  ds.source = parse_source(binio::get_string(in, "source tag", 64));
  ds.seed = binio::get_le<std::uint64_t>(in, "seed");
  ds.n = binio::get_le<std::uint64_t>(in, "sample count");
  ds.x_dim = binio::get_le<std::uint32_t>(in, "x_dim");
  ds.si_dim = binio::get_le<std::uint32_t>(in, "si_dim");
  ds.aux_dim = binio::get_le<std::uint32_t>(in, "aux_dim");
  if (ds.x_dim == 0 || ds.si_dim == 0) throw DataError("dataset declares a zero x_dim or si_dim");

  const auto header_end = in.tellg();
  in.seekg(0, std::ios::end);
  const auto file_end = in.tellg();
  in.seekg(header_end);
  const std::uint64_t payload = static_cast<std::uint64_t>(file_end - header_end);
  const std::uint64_t per_row = 4ull * (ds.x_dim + ds.si_dim + ds.aux_dim);
  if (ds.n > payload / per_row || payload != ds.n * per_row)
    throw DataError("dataset payload is " + std::to_string(payload) + " bytes starting at byte offset " +
                    std::to_string(static_cast<long long>(header_end)) + ", expected " +
                    std::to_string(ds.n * per_row) + " for n=" + std::to_string(ds.n));
  auto read_block = [&](std::vector<float>& dst, std::size_t count, const char* what) {
    dst.resize(count);
    for (auto& v : dst) v = binio::get_f32(in, what);
  };
  read_block(ds.x, ds.n * ds.x_dim, "x block");
  read_block(ds.y, ds.n * ds.si_dim, "y block");
  read_block(ds.aux, ds.n * ds.aux_dim, "aux block");
  return ds;
}

LabeledData LabeledData::subset(std::size_t begin, std::size_t end) const {
  if (begin > end || end > n) throw ConfigError("subset out of range");
  LabeledData out;
  out.n = end - begin;
  out.dim = dim;
  out.features.assign(features.begin() + begin * dim, features.begin() + end * dim);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

namespace {
std::uint32_t get_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  binio::read_exact(in, b, 4, what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}
}  // namespace

LabeledData idx_ingest(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::size_t downsample) {
  if (downsample == 0) throw ConfigError("downsample must be positive");
  std::ifstream img(images, std::ios::binary);
  if (!img) throw DataError("cannot open IDX images '" + images.string() + "'");
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw DataError("cannot open IDX labels '" + labels.string() + "'");

  const auto img_magic = get_be32(img, "IDX image magic");
  if (img_magic != 0x00000803u) throw DataError("IDX images: bad magic, expected 0x00000803");
  const auto count = get_be32(img, "IDX image count");
  const auto rows = get_be32(img, "IDX image rows");
  const auto cols = get_be32(img, "IDX image cols");
  if (rows < downsample || cols < downsample) throw DataError("IDX images are smaller than the pooled size");

  const auto lab_magic = get_be32(lab, "IDX label magic");
  if (lab_magic != 0x00000801u) throw DataError("IDX labels: bad magic, expected 0x00000801");
  const auto lab_count = get_be32(lab, "IDX label count");
  if (lab_count != count)
    throw DataError("IDX count mismatch: " + std::to_string(count) + " images vs " + std::to_string(lab_count) + " labels");

  LabeledData out;
  out.n = count;
  out.dim = downsample * downsample;
  out.features.assign(out.n * out.dim, 0.0);
  out.labels.resize(count);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(rows) * cols);
  for (std::size_t i = 0; i < count; ++i) {
    binio::read_exact(img, pixels.data(), pixels.size(), "IDX pixels");
    double* dst = out.features.data() + i * out.dim;
    for (std::size_t pr = 0; pr < downsample; ++pr) {
      const std::size_t r0 = pr * rows / downsample, r1 = (pr + 1) * rows / downsample;
      for (std::size_t pc = 0; pc < downsample; ++pc) {
        const std::size_t c0 = pc * cols / downsample, c1 = (pc + 1) * cols / downsample;
        double acc = 0.0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) acc += pixels[r * cols + c] / 255.0;
        dst[pr * downsample + pc] = acc / static_cast<double>((r1 - r0) * (c1 - c0));
      }
    }
    unsigned char y;
    binio::read_exact(lab, &y, 1, "IDX label");
    if (y > 9) throw DataError("IDX label " + std::to_string(y) + " at index " + std::to_string(i) + " is outside [0,9]");
    out.labels[i] = y;
  }
  return out;
}

LabeledData gen_blobs(std::size_t n, std::size_t dim, std::size_t classes, double spread,
                      std::uint64_t task_seed, std::uint64_t sample_seed) {
  if (n == 0 || dim == 0 || classes < 2) throw ConfigError("gen_blobs: need n > 0, dim > 0, classes >= 2");
  Rng task = make_rng(task_seed, 0xb1);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> means(classes * dim);
  for (auto& m : means) m = spread * nd(task);
  Rng rng = make_rng(sample_seed, 0xb2);
  std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
  LabeledData out;
  out.n = n;
  out.dim = dim;
  out.features.resize(n * dim);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = label(rng);
    out.labels[i] = c;
    for (std::size_t j = 0; j < dim; ++j) out.features[i * dim + j] = means[c * dim + j] + nd(rng);
  }
  return out;
}

}  // namespace sources
}  // namespace ndsc
