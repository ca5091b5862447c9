#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "reed/data.hpp"
#include "reed/error.hpp"

using namespace reed::data;
using reed::Rng;

namespace {

LabeledDataset constant_labels(int classes, int per_class) {
  LabeledDataset ds;
  ds.num_classes = classes;
  ds.x = Matrix(static_cast<std::size_t>(classes * per_class), 2);
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      ds.y_clean.push_back(c);
      ds.x(ds.y_clean.size() - 1, 0) = c;
    }
  ds.y_noisy = ds.y_clean;
  return ds;
}

// chi-square critical value, 8 degrees of freedom, significance 0.01
constexpr double kChi2Df8 = 20.090;

}  // namespace

TEST_CASE("blobs are deterministic and validated") {
  BlobSpec spec{4, 50, 8, 5.0, 0.5};
  auto a = make_blobs(spec, 1), b = make_blobs(spec, 1), c = make_blobs(spec, 2);
  CHECK(a.x == b.x);
  CHECK(a.y_clean == b.y_clean);
  CHECK(a.y_noisy == a.y_clean);
  CHECK_FALSE(a.x == c.x);
  CHECK(a.size() == 200);
  CHECK(a.dim() == 8);

  CHECK_THROWS_AS(make_blobs({4, 0, 8, 5.0, 0.5}, 1), reed::ConfigError);
  CHECK_THROWS_AS(make_blobs({1, 10, 8, 5.0, 0.5}, 1), reed::ConfigError);
  CHECK_THROWS_AS(make_blobs({4, 10, 1, 5.0, 0.5}, 1), reed::ConfigError);
  CHECK_THROWS_AS(make_blobs({4, 10, 8, 0.0, 0.5}, 1), reed::ConfigError);
}

TEST_CASE("well separated blobs are solved by nearest centroid") {
  auto ds = make_blobs({4, 250, 8, 5.0, 0.5}, 3);
  std::vector<std::vector<double>> centroid(4, std::vector<double>(8, 0.0));
  std::vector<int> count(4, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ++count[ds.y_clean[i]];
    for (std::size_t j = 0; j < 8; ++j) centroid[ds.y_clean[i]][j] += ds.x(i, j);
  }
  for (int c = 0; c < 4; ++c)
    for (double& v : centroid[c]) v /= count[c];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int best = 0;
    double best_d = INFINITY;
    for (int c = 0; c < 4; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < 8; ++j) d += (ds.x(i, j) - centroid[c][j]) * (ds.x(i, j) - centroid[c][j]);
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == ds.y_clean[i];
  }
  CHECK(static_cast<double>(correct) / ds.size() > 0.99);
}

TEST_CASE("tiny sigma blobs are point classes") {
  auto ds = make_blobs({5, 20, 4, 3.0, 1e-9}, 4);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.size(); ++j)
      if (ds.y_clean[i] == ds.y_clean[j]) {
        for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(ds.x(i, k) - ds.x(j, k)) < 1e-6);
      }
}

TEST_CASE("symmetric noise statistics") {
  auto clean = constant_labels(10, 1000);
  Rng r0(5);
  CHECK(inject_symmetric_noise(clean, 0.0, r0).y_noisy == clean.y_clean);

  Rng r1(6);
  auto all = inject_symmetric_noise(clean, 1.0, r1);
  CHECK(std::abs((1.0 - all.noise_rate()) - 0.1) < 0.01);
  CHECK(all.y_clean == clean.y_clean);
  CHECK(all.x == clean.x);

  Rng r2(7);
  auto most = inject_symmetric_noise(clean, 0.9, r2);
  CHECK(std::abs(most.noise_rate() - 0.81) < 0.02);

  // off-diagonal flips are uniform over the other classes
  std::vector<std::vector<int>> flips(10, std::vector<int>(10, 0));
  for (std::size_t i = 0; i < most.size(); ++i) ++flips[most.y_clean[i]][most.y_noisy[i]];
  for (int c = 0; c < 10; ++c) {
    int total = 0;
    for (int k = 0; k < 10; ++k) total += k == c ? 0 : flips[c][k];
    const double expected = total / 9.0;
    double chi2 = 0.0;
    for (int k = 0; k < 10; ++k)
      if (k != c) chi2 += (flips[c][k] - expected) * (flips[c][k] - expected) / expected;
    CHECK(chi2 < kChi2Df8);
  }

  Rng r3(8);
  auto exclusive = inject_symmetric_noise(clean, 0.5, r3, true);
  CHECK(std::abs(exclusive.noise_rate() - 0.5) < 0.02);
}

TEST_CASE("asymmetric noise flips only along the pair map") {
  auto clean = constant_labels(4, 1000);
  std::vector<int> map{1, -1, -1, -1};
  Rng r0(9);
  CHECK(inject_asymmetric_noise(clean, 0.0, map, r0).y_noisy == clean.y_clean);

  Rng r1(10);
  auto noisy = inject_asymmetric_noise(clean, 0.4, map, r1);
  int to_one = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (noisy.y_clean[i] == 0) {
      CHECK((noisy.y_noisy[i] == 0 || noisy.y_noisy[i] == 1));
      to_one += noisy.y_noisy[i] == 1;
    } else {
      CHECK(noisy.y_noisy[i] == noisy.y_clean[i]);
    }
  }
  CHECK(std::abs(to_one - 400) <= 45);
  CHECK(noisy.x == clean.x);

  auto pairs = default_pair_map(10);
  Rng r2(11);
  auto full = inject_asymmetric_noise(constant_labels(10, 200), 1.0, pairs, r2);
  for (std::size_t i = 0; i < full.size(); ++i) {
    const int c = full.y_clean[i];
    CHECK(full.y_noisy[i] == (c % 2 == 0 ? (c + 1) % 10 : c));
  }

  std::vector<int> self{0, -1, -1, -1};
  Rng r3(12);
  CHECK_THROWS_AS(inject_asymmetric_noise(clean, 0.4, self, r3), reed::ConfigError);
}

TEST_CASE("noise dispatch is seeded") {
  auto ds = constant_labels(5, 100);
  NoiseSpec spec{NoiseKind::symmetric, 0.5, {}, false, 42};
  CHECK(apply_noise(ds, spec).y_noisy == apply_noise(ds, spec).y_noisy);
  CHECK(parse_noise_kind(to_string(NoiseKind::asymmetric)) == NoiseKind::asymmetric);
  CHECK_THROWS_AS(parse_noise_kind("diagonal"), reed::ConfigError);
}

TEST_CASE("augmentation") {
  Rng rng(13);
  std::vector<double> x{1.0, -2.0, 0.5, 3.0};
  AugmentationSpec identity{0.0, 1.0, 1.0, 0.0};
  CHECK(identity.is_identity());
  CHECK(augment(x, identity, rng) == x);

  const double sigma = 0.7;
  AugmentationSpec jitter{sigma, 1.0, 1.0, 0.0};
  double total = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto v = augment(x, jitter, rng);
    for (std::size_t k = 0; k < x.size(); ++k) total += (v[k] - x[k]) * (v[k] - x[k]);
  }
  const double expected = x.size() * sigma * sigma;
  CHECK(std::abs(total / draws - expected) < 0.05 * expected);

  Rng parent(14);
  Rng fa = parent.fork(1), fb = parent.fork(2);
  AugmentationSpec def{};
  CHECK(augment(x, def, fa) != augment(x, def, fb));

  CHECK_THROWS_AS((AugmentationSpec{-1.0, 1.0, 1.0, 0.0}.validate()), reed::ConfigError);
  CHECK_THROWS_AS((AugmentationSpec{0.1, 1.2, 0.8, 0.0}.validate()), reed::ConfigError);
  CHECK_THROWS_AS((AugmentationSpec{0.1, 1.0, 1.0, 1.5}.validate()), reed::ConfigError);
}

TEST_CASE("stratified split") {
  auto ds = make_blobs({10, 500, 16, 4.0, 1.0}, 15);
  auto s = train_test_split(ds, 0.2, 16);
  CHECK(s.train.size() == 4000);
  CHECK(s.test.size() == 1000);
  std::vector<int> per_class(10, 0);
  for (auto y : s.test.y_clean) ++per_class[y];
  for (int c : per_class) CHECK(c == 100);

  std::vector<std::size_t> all = s.train_indices;
  all.insert(all.end(), s.test_indices.begin(), s.test_indices.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(ds.size());
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);

  auto again = train_test_split(ds, 0.2, 16);
  CHECK(again.test_indices == s.test_indices);
  CHECK(std::is_sorted(s.train_indices.begin(), s.train_indices.end()));

  auto odd = make_blobs({3, 7, 4, 4.0, 1.0}, 17);
  auto so = train_test_split(odd, 0.2, 1);
  CHECK(so.test.size() == 3);  // round(1.4) per class

  CHECK_THROWS_AS(train_test_split(ds, 0.0, 1), reed::ConfigError);
  CHECK_THROWS_AS(train_test_split(ds, 1.0, 1), reed::ConfigError);
  CHECK_THROWS_AS(train_test_split(constant_labels(2, 1), 0.5, 1), reed::ConfigError);
}

TEST_CASE("CSV round trip is exact") {
  auto ds = make_blobs({3, 10, 5, 4.0, 1.0}, 18);
  NoiseSpec spec{NoiseKind::symmetric, 0.5, {}, false, 1};
  ds = apply_noise(ds, spec);
  std::stringstream buf;
  write_csv(ds, buf);
  CHECK(buf.str().rfind("x_0,x_1,x_2,x_3,x_4,y_clean,y_noisy\n", 0) == 0);
  auto back = read_csv(buf, 3);
  CHECK(back.x == ds.x);
  CHECK(back.y_clean == ds.y_clean);
  CHECK(back.y_noisy == ds.y_noisy);
  CHECK(back.num_classes == 3);

  std::stringstream bad("x_0,y_clean,y_noisy\n1.0,0\n");
  CHECK_THROWS_AS(read_csv(bad), reed::ConfigError);
  std::stringstream out_of_range("x_0,y_clean,y_noisy\n1.0,0,5\n");
  CHECK_THROWS_AS(read_csv(out_of_range, 3), reed::ConfigError);
}
