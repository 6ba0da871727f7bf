#include <gtest/gtest.h>

#include <sstream>

#include "malpurify/adversarial_training.hpp"
#include "malpurify/attacks.hpp"
#include "malpurify/checkpoint.hpp"
#include "malpurify/detector.hpp"
#include "malpurify/metrics.hpp"
#include "test_util.hpp"

using namespace malpurify;
using mptest::relative_error;

namespace {

Splits small_data(double noise, std::uint64_t seed = 7) {
  SyntheticConfig c;
  c.seed = seed;
  c.n_benign = c.n_malicious = 300;
  c.dim = 100;
  c.signal_features = 20;
  c.noise_rate = noise;
  return split(generate_synthetic(c), SplitSpec{0.6, 0.2, 0.2, 1});
}

DetectorTrainConfig quick(Index epochs) {
  DetectorTrainConfig c;
  c.epochs = epochs;
  c.batch_size = 64;
  return c;
}

DetectorArchitecture narrow() {
  DetectorArchitecture a;
  a.hidden = {32, 32};
  return a;
}

}  // namespace

TEST(Detector, ZeroWeightModelScoresHalfAndTiesMalicious) {
  const auto m = mptest::linear_detector(Vector::Zero(5), 0.0);
  const auto p = m.predict(Vector::Ones(5));
  EXPECT_EQ(p.score, 0.5);
  EXPECT_EQ(p.label, Label::malicious);
  EXPECT_THROW(m.predict(Vector::Ones(4)), ShapeError);
}

TEST(Detector, DefaultArchitecture) {
  const auto m = DetectorModel::initialize(DetectorArchitecture{}, 1);
  ASSERT_EQ(m.depth(), 3);
  EXPECT_EQ(m.network().layers()[0].output_dim(), 200);
  EXPECT_EQ(m.network().layers()[0].activation, Activation::elu);
  EXPECT_EQ(m.network().layers()[1].output_dim(), 200);
  EXPECT_EQ(m.network().layers()[2].activation, Activation::sigmoid);
  EXPECT_EQ(m.feature_layer(), 2);
}

TEST(Detector, SeparableDataReachesHighValidationAccuracy) {
  const auto s = small_data(0.0);
  const auto m = fit_detector(s.train, s.val, narrow(), quick(30), 3);
  EXPECT_GE(accuracy(m, s.val), 0.99);
  ASSERT_EQ(m.history().size(), 30u);
  EXPECT_LE(m.history().back().train_loss, m.history().front().train_loss);
  // A held-out malware sample carrying signal features is flagged.
  const auto mal = s.test.with_label(Label::malicious);
  EXPECT_EQ(m.predict(mal.sample(0)).label, Label::malicious);
}

TEST(Detector, ZeroEpochsIsNearChance) {
  const auto s = small_data(0.05);
  const auto m = fit_detector(s.train, s.val, DetectorArchitecture{}, quick(0), 3);
  EXPECT_NEAR(accuracy(m, s.test), 0.5, 0.15);
  EXPECT_TRUE(m.history().empty());
}

TEST(Detector, DeterministicUnderSeed) {
  const auto s = small_data(0.05);
  const auto a = fit_detector(s.train, s.val, narrow(), quick(3), 9);
  const auto b = fit_detector(s.train, s.val, narrow(), quick(3), 9);
  const auto c = fit_detector(s.train, s.val, narrow(), quick(3), 10);
  EXPECT_EQ(a.network().flatten(), b.network().flatten());
  EXPECT_NE(a.network().flatten(), c.network().flatten());
  const Vector x = s.test.sample(0);
  EXPECT_EQ(a.predict(x).score, a.predict(x).score);
}

TEST(Detector, RejectsEmptyData) {
  LabeledDataset empty;
  empty.features = Matrix::Zero(0, 5);
  EXPECT_THROW(train_detector(empty, empty, quick(1), 1), ConfigError);
}

TEST(Detector, InternalReprAtDepthIsScore) {
  const auto m = mptest::small_detector(12, {8, 6}, 4);
  Rng rng(1);
  const Matrix x = mptest::random_binary(5, 12, rng);
  const Matrix top = m.internal_repr(x, m.depth());
  ASSERT_EQ(top.cols(), 1);
  EXPECT_EQ(Vector(top.col(0)), m.scores(x));
  EXPECT_EQ(m.internal_repr(x, 1).cols(), 8);
  EXPECT_EQ(m.internal_repr(x, 2), m.internal_repr(x, 2));
  EXPECT_THROW(m.internal_repr(x, 0), ShapeError);
  EXPECT_THROW(m.internal_repr(x, 4), ShapeError);
}

TEST(Detector, SignalBitChangesRepresentation) {
  const auto s = small_data(0.0);
  const auto m = fit_detector(s.train, s.val, narrow(), quick(10), 3);
  SyntheticConfig c;
  c.dim = 100;
  c.signal_features = 20;
  const auto layout = synthetic_layout(c);
  Vector x = s.test.with_label(Label::benign).sample(0);
  Vector y = x;
  const Index bit = layout.malicious_signal.front();
  y(bit) = 1.0 - y(bit);
  const Vector fx = m.internal_repr(x, 2), fy = m.internal_repr(y, 2);
  EXPECT_NE(fx.norm(), fy.norm());
}

TEST(FeatureDistance, ZeroSymmetricAndGradient) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = mptest::small_detector(10, {7, 5}, 100 + trial);
    const Matrix a = mptest::random_matrix(1, 10, rng), b = mptest::random_matrix(1, 10, rng);
    const Vector va = a.row(0).transpose(), vb = b.row(0).transpose();
    for (Index n = 1; n <= m.depth(); ++n) {
      EXPECT_EQ(internal_feature_distance(m, va, va, n), 0.0);
      EXPECT_NEAR(internal_feature_distance(m, va, vb, n), internal_feature_distance(m, vb, va, n), 1e-15);
      const Matrix g = feature_distance(m, a, b, n).grad_b;
      const Matrix fd = mptest::numeric_gradient(
          [&](const Matrix& v) { return feature_distance(m, a, v, n).values(0); }, b);
      EXPECT_LT(relative_error(g, fd), 1e-4);
    }
  }
}

TEST(Detector, ScoreGradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = mptest::small_detector(9, {6, 4}, 200 + trial);
    const Matrix x = mptest::random_matrix(1, 9, rng);
    const Matrix g = m.score_and_gradient(x).second;
    const Matrix fd = mptest::numeric_gradient([&](const Matrix& v) { return m.scores(v)(0); }, x);
    EXPECT_LT(relative_error(g, fd), 1e-4);
  }
}

TEST(Detector, CheckpointRoundTripIsExact) {
  const auto s = small_data(0.05);
  const auto m = fit_detector(s.train, s.val, narrow(), quick(2), 5);
  std::stringstream buf;
  write_checkpoint(buf, m.to_checkpoint());
  const std::string bytes = buf.str();
  const auto back = DetectorModel::from_checkpoint(read_checkpoint(buf, "detector"));
  EXPECT_EQ(back.network().flatten(), m.network().flatten());
  EXPECT_EQ(back.threshold(), m.threshold());
  EXPECT_EQ(back.feature_layer(), m.feature_layer());
  std::stringstream again;
  write_checkpoint(again, back.to_checkpoint());
  EXPECT_EQ(again.str(), bytes);

  std::stringstream wrong(bytes);
  EXPECT_THROW(read_checkpoint(wrong, "purifier"), FormatError);
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_checkpoint(cut), FormatError);
  std::stringstream extra(bytes + "x");
  EXPECT_THROW(read_checkpoint(extra), FormatError);
}

TEST(Detector, ThresholdSweepIsMonotone) {
  const auto s = small_data(0.1);
  const auto base = fit_detector(s.train, s.val, narrow(), quick(5), 5);
  double prev_fnr = 2, prev_fpr = -1;
  for (double t : {0.9, 0.7, 0.5, 0.3, 0.1}) {
    const DetectorModel m(base.network(), t, 5, 0);
    const auto metrics = compute_metrics(m.labels(s.test.features), s.test.labels);
    EXPECT_LE(metrics.fnr, prev_fnr);
    EXPECT_GE(metrics.fpr, prev_fpr);
    prev_fnr = metrics.fnr;
    prev_fpr = metrics.fpr;
  }
}

TEST(AdversarialTraining, ZeroStrengthIsPlainTraining) {
  const auto s = small_data(0.05);
  AdversarialTrainingConfig at;
  at.step = 0.0;
  const auto a = train_detector_adversarial(s.train, s.val, quick(2), at, 4, narrow());
  const auto b = fit_detector(s.train, s.val, narrow(), quick(2), 4);
  EXPECT_EQ(a.network().flatten(), b.network().flatten());
}

TEST(AdversarialTraining, DeterministicAndMoreRobustThanPlain) {
  const auto s = small_data(0.05);
  AdversarialTrainingConfig at;
  at.iterations = 10;
  const auto a = train_detector_adversarial(s.train, s.val, quick(15), at, 4, narrow());
  const auto b = train_detector_adversarial(s.train, s.val, quick(15), at, 4, narrow());
  EXPECT_EQ(a.network().flatten(), b.network().flatten());

  const auto plain = fit_detector(s.train, s.val, narrow(), quick(15), 4);
  const Matrix mal = s.test.with_label(Label::malicious).features;
  const auto bounds = default_bounds(mal, BoundsPolicy::add_only);
  auto robust = [&](const DetectorModel& m) {
    const auto res = run_attack(mal, bounds, AttackSpec::defaults(AttackKind::rfgsm), AttackSurface::grey(m));
    double kept = 0;
    for (const auto& r : res) kept += m.predict(r.adversarial).label == Label::malicious ? 1 : 0;
    return kept / static_cast<double>(res.size());
  };
  EXPECT_GE(robust(a), robust(plain));
}
