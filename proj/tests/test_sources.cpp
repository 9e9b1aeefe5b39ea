#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ndsc/binio.hpp"
#include "ndsc/error.hpp"
#include "ndsc/gradcomp.hpp"
#include "ndsc/sources.hpp"

using namespace ndsc;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ndsc_tests";
  fs::create_directories(dir);
  return dir / name;
}

// Upper 1% points of the chi-square distribution.
constexpr double kChi2_7 = 18.475;
constexpr double kChi2_31 = 52.191;

int code_of(const PairDataset& ds, std::size_t i, bool si) {
  const auto row = si ? ds.y_row(i) : ds.x_row(i);
  return static_cast<int>(row[0]) * 4 + static_cast<int>(row[1]) * 2 + static_cast<int>(row[2]);
}

// Solves the symmetric positive-definite system a x = b in place (Cholesky).
void cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n, std::size_t rhs) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    REQUIRE(d > 0.0);
    a[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / a[j * n + j];
    }
  }
  for (std::size_t r = 0; r < rhs; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i * rhs + r];
      for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k * rhs + r];
      b[i * rhs + r] = s / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = b[i * rhs + r];
      for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k * rhs + r];
      b[i * rhs + r] = s / a[i * n + i];
    }
  }
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
}  // namespace

TEST_SUITE("sources") {
  TEST_CASE("gaussian pairs") {
    const auto same = sources::gen_gaussian(1000, 0.0, 4);
    CHECK(same.x == same.y);
    const auto ds = sources::gen_gaussian(100000, 0.1, 5);
    CHECK(ds.x_dim == 1);
    CHECK(ds.si_dim == 1);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < ds.n; ++i) {
      mx += ds.x[i];
      my += ds.y[i];
    }
    mx /= ds.n;
    my /= ds.n;
    double vx = 0, vy = 0, cxy = 0;
    for (std::size_t i = 0; i < ds.n; ++i) {
      vx += (ds.x[i] - mx) * (ds.x[i] - mx);
      vy += (ds.y[i] - my) * (ds.y[i] - my);
      cxy += (ds.x[i] - mx) * (ds.y[i] - my);
    }
    const double var_x = vx / (ds.n - 1), corr = cxy / std::sqrt(vx * vy);
    CHECK(var_x >= 0.98);
    CHECK(var_x <= 1.02);
    CHECK(corr >= 0.992);
    CHECK(corr <= 0.998);
    CHECK(sources::gen_gaussian(3, 0.1, 5).x[0] == ds.x[0]);
    CHECK_THROWS_AS(sources::gen_gaussian(0, 0.1, 1), ConfigError);
    CHECK_THROWS_AS(sources::gen_gaussian(5, -0.1, 1), ConfigError);
  }

  TEST_CASE("hamming pairs follow the declared law") {
    const std::size_t n = 100000;
    const auto ds = sources::gen_hamming(n, 6);
    std::array<double, 8> px{};
    std::array<double, 32> joint{};
    std::size_t equal = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int x = code_of(ds, i, false), y = code_of(ds, i, true);
      CHECK(x == static_cast<int>(ds.aux_row(i)[0]));
      CHECK(y == static_cast<int>(ds.aux_row(i)[1]));
      const int diff = x ^ y;
      REQUIRE((diff == 0 || diff == 1 || diff == 2 || diff == 4));
      px[static_cast<std::size_t>(x)] += 1;
      const int slot = diff == 0 ? 0 : diff == 4 ? 1 : diff == 2 ? 2 : 3;
      joint[static_cast<std::size_t>(x * 4 + slot)] += 1;
      if (diff == 0) ++equal;
    }
    double chi_x = 0, chi_joint = 0;
    for (double c : px) chi_x += (c - n / 8.0) * (c - n / 8.0) / (n / 8.0);
    for (double c : joint) chi_joint += (c - n / 32.0) * (c - n / 32.0) / (n / 32.0);
    CHECK(chi_x < kChi2_7);
    CHECK(chi_joint < kChi2_31);
    CHECK(std::abs(static_cast<double>(equal) / n - 0.25) <= 0.01);
  }

  TEST_CASE("split field range and determinism") {
    const auto a = sources::gen_split_field(200, 16, 7);
    CHECK(a.x_dim == 128);
    CHECK(a.si_dim == 128);
    for (float v : a.x) REQUIRE((v >= 0.0f && v <= 1.0f));
    for (float v : a.y) REQUIRE((v >= 0.0f && v <= 1.0f));
    CHECK(a == sources::gen_split_field(200, 16, 7));
    CHECK_FALSE(a == sources::gen_split_field(200, 16, 8));
    CHECK_THROWS_AS(sources::gen_split_field(10, 15, 1), ConfigError);
    CHECK_THROWS_AS(sources::gen_split_field(10, 6, 1), ConfigError);
  }

  TEST_CASE("split field halves are linearly predictable from each other") {
    // Least-squares map from the bottom half (plus intercept) to the top half,
    // fitted on one sample set and scored on another.
    const auto fit = sources::gen_split_field(10000, 16, 9), held = sources::gen_split_field(2000, 16, 10);
    const std::size_t p = fit.si_dim + 1, q = fit.x_dim;
    std::vector<double> gram(p * p, 0.0), cross(p * q, 0.0), feat(p);
    for (std::size_t i = 0; i < fit.n; ++i) {
      const auto y = fit.y_row(i);
      const auto x = fit.x_row(i);
      for (std::size_t a = 0; a < fit.si_dim; ++a) feat[a] = y[a];
      feat[fit.si_dim] = 1.0;
      for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b < p; ++b) gram[a * p + b] += feat[a] * feat[b];
        for (std::size_t c = 0; c < q; ++c) cross[a * q + c] += feat[a] * x[c];
      }
    }
    for (std::size_t a = 0; a < p; ++a) gram[a * p + a] += 1e-6 * fit.n;
    cholesky_solve(gram, cross, p, q);
    std::vector<double> mean(q, 0.0);
    for (std::size_t i = 0; i < held.n; ++i)
      for (std::size_t c = 0; c < q; ++c) mean[c] += held.x_row(i)[c] / held.n;
    double resid = 0.0, total = 0.0;
    for (std::size_t i = 0; i < held.n; ++i) {
      const auto y = held.y_row(i);
      const auto x = held.x_row(i);
      for (std::size_t c = 0; c < q; ++c) {
        double pred = cross[fit.si_dim * q + c];
        for (std::size_t a = 0; a < fit.si_dim; ++a) pred += y[a] * cross[a * q + c];
        resid += (x[c] - pred) * (x[c] - pred);
        total += (x[c] - mean[c]) * (x[c] - mean[c]);
      }
    }
    const double r2 = 1.0 - resid / total;
    MESSAGE("held-out R^2 = " << r2);
    CHECK(r2 > 0.5);
  }

  TEST_CASE("dataset files round-trip bitwise") {
    const auto ds = sources::gen_hamming(50, 3);
    const auto path = temp_file("pairs.ndsd");
    sources::dataset_write(ds, path);
    CHECK(sources::dataset_read(path) == ds);
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "NDSD");
    CHECK(binio::get_le<std::uint16_t>(in, "version") == sources::kDatasetVersion);
    CHECK(binio::get_string(in, "source") == "hamming");
    CHECK(fs::file_size(path) == 4 + 2 + 4 + 7 + 8 + 8 + 12 + 4 * (50 * 3 + 50 * 3 + 50 * 2));
  }

  TEST_CASE("dataset file errors") {
    const auto ds = sources::gen_gaussian(20, 0.1, 3);
    const auto path = temp_file("broken.ndsd");
    sources::dataset_write(ds, path);
    std::string bytes;
    {
      std::ifstream in(path, std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& body) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << body;
    };
    std::string bad = bytes;
    bad[1] = 'Z';
    write(bad);
    CHECK_THROWS_WITH_AS(sources::dataset_read(path), doctest::Contains("NDSD"), DataError);
    std::string newer = bytes;
    newer[4] = 2;
    write(newer);
    CHECK_THROWS_WITH_AS(sources::dataset_read(path), doctest::Contains("version"), DataError);
    write(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_WITH_AS(sources::dataset_read(path), doctest::Contains("offset"), DataError);
    write(bytes + "xx");
    CHECK_THROWS_AS(sources::dataset_read(path), DataError);
  }

  TEST_CASE("idx fixture ingests through an independent writer") {
    const auto img = temp_file("fixture-images.idx"), lab = temp_file("fixture-labels.idx");
    {
      std::ofstream out(img, std::ios::binary);
      write_be32(out, 0x00000803);
      write_be32(out, 2);
      write_be32(out, 4);
      write_be32(out, 4);
      for (int k = 0; k < 16; ++k) out.put(static_cast<char>(255));  // white image
      for (int k = 0; k < 16; ++k) out.put(static_cast<char>(k < 8 ? 0 : 51));  // top half dark
      std::ofstream lout(lab, std::ios::binary);
      write_be32(lout, 0x00000801);
      write_be32(lout, 2);
      lout.put(3);
      lout.put(9);
    }
    const auto data = sources::idx_ingest(img, lab, 2);
    CHECK(data.n == 2);
    CHECK(data.dim == 4);
    CHECK(data.labels == std::vector<int>{3, 9});
    for (std::size_t j = 0; j < 4; ++j) CHECK(data.features[j] == doctest::Approx(1.0));
    CHECK(data.features[4] == doctest::Approx(0.0));
    CHECK(data.features[6] == doctest::Approx(0.2));

    {
      std::ofstream lout(lab, std::ios::binary | std::ios::trunc);
      write_be32(lout, 0x00000801);
      write_be32(lout, 2);
      lout.put(3);
      lout.put(10);
    }
    CHECK_THROWS_AS(sources::idx_ingest(img, lab, 2), DataError);
    {
      std::ofstream lout(lab, std::ios::binary | std::ios::trunc);
      write_be32(lout, 0x00000801);
      write_be32(lout, 3);
    }
    CHECK_THROWS_WITH_AS(sources::idx_ingest(img, lab, 2), doctest::Contains("count"), DataError);
    {
      std::ofstream lout(lab, std::ios::binary | std::ios::trunc);
      write_be32(lout, 0x00000803);
    }
    CHECK_THROWS_WITH_AS(sources::idx_ingest(img, lab, 2), doctest::Contains("magic"), DataError);
  }

  TEST_CASE("gradient pairs share dimension and align") {
    gradcomp::ClassifierConfig cc;
    const auto task = gradcomp::make_blob_task(2000, 200, 1.0, 3);
    const auto ds = sources::gen_gradient_dataset(cc, task.pre, 3, 60, 0.5, 21);
    const std::size_t d = gradcomp::classifier_param_count(cc);
    CHECK(d == 64 * 32 + 32 + 32 * 10 + 10);
    CHECK(ds.x_dim == d);
    CHECK(ds.si_dim == d);
    CHECK(ds.aux_dim == 1);
    CHECK(ds.source == SourceKind::gradients);
    double mean_cos = 0.0;
    for (std::size_t i = 0; i < ds.n; ++i) {
      double xy = 0, xx = 0, yy = 0;
      for (std::size_t j = 0; j < d; ++j) {
        xy += double(ds.x_row(i)[j]) * ds.y_row(i)[j];
        xx += double(ds.x_row(i)[j]) * ds.x_row(i)[j];
        yy += double(ds.y_row(i)[j]) * ds.y_row(i)[j];
      }
      mean_cos += xy / std::sqrt(xx * yy) / ds.n;
    }
    CHECK(mean_cos > 0.0);
    CHECK(ds == sources::gen_gradient_dataset(cc, task.pre, 3, 60, 0.5, 21));
    CHECK_THROWS_AS(sources::gen_gradient_dataset(cc, task.pre, 1, 60, 0.5, 21), ConfigError);
  }

  TEST_CASE("gradient runs are independent across initializations") {
    gradcomp::ClassifierConfig cc;
    const auto task = gradcomp::make_blob_task(2000, 200, 1.0, 3);
    const std::size_t runs = 10, steps = 20;
    const auto ds = sources::gen_gradient_dataset(cc, task.pre, runs, steps, 1.0, 33);
    REQUIRE(ds.n == runs * steps);
    const std::size_t d = ds.x_dim;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t a = 0; a < runs; ++a)
        for (std::size_t b = a + 1; b < runs; ++b) {
          const auto u = ds.x_row(a * steps + t), v = ds.x_row(b * steps + t);
          double mu = 0, mv = 0;
          for (std::size_t j = 0; j < d; ++j) {
            mu += u[j];
            mv += v[j];
          }
          mu /= d;
          mv /= d;
          double uv = 0, uu = 0, vv = 0;
          for (std::size_t j = 0; j < d; ++j) {
            uv += (u[j] - mu) * (v[j] - mv);
            uu += (u[j] - mu) * (u[j] - mu);
            vv += (v[j] - mv) * (v[j] - mv);
          }
          total += uv / std::sqrt(uu * vv);
          ++pairs;
        }
    const double mean_corr = total / pairs;
    MESSAGE("mean cross-run correlation = " << mean_corr);
    CHECK(std::abs(mean_corr) < 0.1);
    CHECK_FALSE(std::equal(ds.x_row(0).begin(), ds.x_row(0).end(), ds.x_row(steps).begin()));
  }
}
