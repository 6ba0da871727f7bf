#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "malpurify/features.hpp"
#include "test_util.hpp"

using namespace malpurify;

namespace {

LabeledDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_sparse(in);
}

std::string dump(const LabeledDataset& ds) {
  std::ostringstream out;
  write_sparse(out, ds);
  return out.str();
}

// Plain logistic regression by full-batch gradient descent; shares no code
// with the library's networks or optimiser.
struct LogReg {
  std::vector<double> w;
  double b = 0;

  void fit(const LabeledDataset& ds, int epochs, double lr) {
    const auto n = static_cast<std::size_t>(ds.size());
    const auto d = static_cast<std::size_t>(ds.dim());
    w.assign(d, 0.0);
    std::vector<std::vector<std::size_t>> on(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c)
        if (ds.features(static_cast<Index>(r), static_cast<Index>(c)) == 1.0) on[r].push_back(c);
    for (int e = 0; e < epochs; ++e) {
      std::vector<double> gw(d, 0.0);
      double gb = 0;
      for (std::size_t r = 0; r < n; ++r) {
        double z = b;
        for (auto c : on[r]) z += w[c];
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double err = p - (ds.labels[r] == Label::malicious ? 1.0 : 0.0);
        for (auto c : on[r]) gw[c] += err;
        gb += err;
      }
      for (std::size_t c = 0; c < d; ++c) w[c] -= lr * gw[c] / static_cast<double>(n);
      b -= lr * gb / static_cast<double>(n);
    }
  }

  double accuracy(const LabeledDataset& ds) const {
    int ok = 0;
    for (Index r = 0; r < ds.size(); ++r) {
      double z = b;
      for (Index c = 0; c < ds.dim(); ++c) z += ds.features(r, c) * w[static_cast<std::size_t>(c)];
      ok += (z >= 0) == (ds.labels[static_cast<std::size_t>(r)] == Label::malicious) ? 1 : 0;
    }
    return static_cast<double>(ok) / static_cast<double>(ds.size());
  }
};

}  // namespace

TEST(Sparse, ParsesLabelAndIndices) {
  const auto ds = parse("#dim 4\n1 1:1\n");
  ASSERT_EQ(ds.size(), 1);
  EXPECT_EQ(ds.labels[0], Label::malicious);
  EXPECT_EQ(ds.sample(0), (Vector(4) << 0, 1, 0, 0).finished());
}

TEST(Sparse, EmptyFeatureListIsZeroVector) {
  const auto ds = parse("#dim 3\n0\n");
  ASSERT_EQ(ds.size(), 1);
  EXPECT_EQ(ds.labels[0], Label::benign);
  EXPECT_TRUE(ds.sample(0).isZero(0));
}

TEST(Sparse, RejectsBadInput) {
  EXPECT_THROW(parse("#dim 4\n1 7:1\n"), FormatError);
  EXPECT_THROW(parse("#dim 4\n2 1:1\n"), FormatError);
  EXPECT_THROW(parse("#dim 4\n1 1:0.5\n"), FormatError);
  EXPECT_THROW(parse("#dim 4\n1 1:2\n"), FormatError);
  EXPECT_THROW(parse("#dim 4\n1 2:1 1:1\n"), FormatError);
  EXPECT_THROW(parse("#dim 4\n1 1:1 1:1\n"), FormatError);
  EXPECT_THROW(parse("#dim 4\n1 x:1\n"), FormatError);
  EXPECT_THROW(parse("#dim 4\n1 -1:1\n"), FormatError);
  EXPECT_THROW(parse("1 1:1\n"), FormatError);
  EXPECT_THROW(parse(""), FormatError);
}

TEST(Sparse, RoundTripIsBitIdentical) {
  const std::string canonical = "#dim 6\n1 0:1 5:1\n0\n0 2:1 3:1 4:1\n";
  EXPECT_EQ(dump(parse(canonical)), canonical);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    LabeledDataset ds;
    ds.features = mptest::random_binary(1 + static_cast<Index>(rng.below(20)), 1 + static_cast<Index>(rng.below(30)), rng);
    for (Index r = 0; r < ds.size(); ++r) ds.labels.push_back(rng.bernoulli(0.5) ? Label::malicious : Label::benign);
    const std::string text = dump(ds);
    const auto back = parse(text);
    EXPECT_EQ(back.features, ds.features);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(dump(back), text);
    EXPECT_TRUE(is_binary(back.features));
  }
}

TEST(Synthetic, DeterministicUnderSeed) {
  SyntheticConfig c;
  c.n_benign = c.n_malicious = 50;
  const auto a = generate_synthetic(c);
  const auto b = generate_synthetic(c);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  c.seed = 8;
  EXPECT_NE(generate_synthetic(c).features, a.features);
}

TEST(Synthetic, ClassCountsAndBinary) {
  SyntheticConfig c;
  c.n_benign = 30;
  c.n_malicious = 70;
  const auto ds = generate_synthetic(c);
  EXPECT_EQ(ds.indices_of(Label::benign).size(), 30u);
  EXPECT_EQ(ds.indices_of(Label::malicious).size(), 70u);
  EXPECT_TRUE(is_binary(ds.features));
  c.signal_features = c.dim + 1;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = SyntheticConfig{};
  c.n_benign = 0;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

// With no cross-class noise each class only ever carries its own signal
// features, so the signed signal count separates the classes exactly.
TEST(Synthetic, NoNoiseIsSeparable) {
  SyntheticConfig c;
  c.noise_rate = 0;
  c.n_benign = c.n_malicious = 200;
  const auto ds = generate_synthetic(c);
  const auto layout = synthetic_layout(c);
  for (Index r = 0; r < ds.size(); ++r) {
    double score = 0;
    for (Index i : layout.malicious_signal) score += ds.features(r, i);
    for (Index i : layout.benign_signal) score -= ds.features(r, i);
    const bool mal = ds.labels[static_cast<std::size_t>(r)] == Label::malicious;
    EXPECT_EQ(score > 0, mal);
    EXPECT_EQ(score < 0, !mal);
  }
  LogReg lr;
  lr.fit(ds, 300, 1.0);
  EXPECT_EQ(lr.accuracy(ds), 1.0);
}

TEST(Synthetic, DefaultConfigIsLearnableByLogisticRegression) {
  const auto ds = generate_synthetic(SyntheticConfig{});
  const auto s = split(ds, SplitSpec{});
  LogReg lr;
  lr.fit(s.train, 300, 1.0);
  EXPECT_GE(lr.accuracy(s.test), 0.95);
}

TEST(Split, SizesDeterminismAndPartition) {
  LabeledDataset ds;
  ds.features = Matrix::Zero(10, 4);
  for (Index r = 0; r < 10; ++r) {
    ds.features(r, r % 4) = 1;
    ds.labels.push_back(r % 2 ? Label::malicious : Label::benign);
  }
  SplitSpec spec;
  spec.seed = 5;
  const auto a = split(ds, spec);
  EXPECT_EQ(a.train.size(), 6);
  EXPECT_EQ(a.val.size(), 2);
  EXPECT_EQ(a.test.size(), 2);
  const auto b = split(ds, spec);
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.test.labels, b.test.labels);

  std::map<std::pair<std::vector<double>, Label>, int> before, after;
  auto count = [](const LabeledDataset& d, auto& m) {
    for (Index r = 0; r < d.size(); ++r) {
      std::vector<double> row(d.features.row(r).data(), d.features.row(r).data() + d.dim());
      ++m[{row, d.labels[static_cast<std::size_t>(r)]}];
    }
  };
  count(ds, before);
  count(a.train, after);
  count(a.val, after);
  count(a.test, after);
  EXPECT_EQ(before, after);

  spec.train = 0.7;
  EXPECT_THROW(split(ds, spec), ConfigError);
}

TEST(Bounds, AddOnlyAndFree) {
  Vector x(2);
  x << 1, 0;
  const auto add = default_bounds(x, BoundsPolicy::add_only);
  EXPECT_EQ(add.lower, Matrix(x.transpose()));
  EXPECT_EQ(add.upper, Matrix::Ones(1, 2));
  const auto fr = default_bounds(x, "free");
  EXPECT_EQ(fr.lower, Matrix::Zero(1, 2));
  EXPECT_EQ(fr.upper, Matrix::Ones(1, 2));
  EXPECT_THROW(default_bounds(x, "sideways"), ConfigError);

  const Matrix deleted = Matrix::Zero(1, 2);
  EXPECT_EQ(add.project(deleted), Matrix(x.transpose()));
}

TEST(Binarize, RoundsAtHalfTiesUpAndIsIdempotent) {
  Matrix v(1, 5);
  v << 0.0, 0.49, 0.5, 0.51, 1.0;
  const Matrix b = binarize(v);
  EXPECT_EQ(b, (Matrix(1, 5) << 0, 0, 1, 1, 1).finished());
  EXPECT_EQ(binarize(b), b);
  Rng rng(2);
  const Matrix r = mptest::random_matrix(20, 20, rng, -0.5, 1.5);
  EXPECT_EQ(binarize(binarize(r)), binarize(r));
}

TEST(Binarize, RandomizedRoundingMatchesFraction) {
  Rng rng(4);
  const Matrix v = Matrix::Constant(200, 500, 0.3);
  const double mean = randomized_round(v, rng).mean();
  const double sigma = std::sqrt(0.3 * 0.7 / 1e5);
  EXPECT_NEAR(mean, 0.3, 3 * sigma);
}
