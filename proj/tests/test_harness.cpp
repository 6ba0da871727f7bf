#include <gtest/gtest.h>

#include <sstream>

#include "malpurify/harness.hpp"
#include "test_util.hpp"

using namespace malpurify;

namespace {

std::vector<Label> labels_of(std::initializer_list<int> v) {
  std::vector<Label> out;
  for (int x : v) out.push_back(x ? Label::malicious : Label::benign);
  return out;
}

}  // namespace

TEST(Metrics, ConfusionExample) {
  // TP=9, FN=1, TN=8, FP=2
  std::vector<Label> pred, truth;
  for (int i = 0; i < 9; ++i) pred.push_back(Label::malicious), truth.push_back(Label::malicious);
  pred.push_back(Label::benign), truth.push_back(Label::malicious);
  for (int i = 0; i < 8; ++i) pred.push_back(Label::benign), truth.push_back(Label::benign);
  for (int i = 0; i < 2; ++i) pred.push_back(Label::malicious), truth.push_back(Label::benign);
  const auto m = compute_metrics(pred, truth);
  EXPECT_EQ(m.confusion.tp, 9);
  EXPECT_EQ(m.confusion.fn, 1);
  EXPECT_DOUBLE_EQ(m.fnr, 0.1);
  EXPECT_DOUBLE_EQ(m.fpr, 0.2);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.85);
  EXPECT_DOUBLE_EQ(m.balanced_accuracy, 0.85);
  const double p = 9.0 / 11.0, r = 0.9;
  EXPECT_NEAR(m.f1, 2 * p * r / (p + r), 1e-15);
  EXPECT_NEAR(m.f1, 0.857, 1e-3);
}

TEST(Metrics, Extremes) {
  const auto truth = labels_of({1, 1, 0, 0});
  const auto all = compute_metrics(truth, truth);
  EXPECT_EQ(all.accuracy, 1.0);
  EXPECT_EQ(all.balanced_accuracy, 1.0);
  EXPECT_EQ(all.f1, 1.0);
  EXPECT_EQ(all.fpr, 0.0);
  EXPECT_EQ(all.fnr, 0.0);
  const auto mal = compute_metrics(labels_of({1, 1, 1, 1}), truth);
  EXPECT_EQ(mal.fpr, 1.0);
  EXPECT_EQ(mal.fnr, 0.0);
  EXPECT_EQ(mal.accuracy, 0.5);
  EXPECT_EQ(compute_metrics(labels_of({0, 0}), labels_of({1, 1})).f1, 0.0);
  EXPECT_THROW(compute_metrics(std::vector<Label>{}, std::vector<Label>{}), ConfigError);
  EXPECT_THROW(compute_metrics(labels_of({1}), truth), ShapeError);
}

TEST(Config, DefaultsRoundTrip) {
  ExperimentConfig c;
  c.scenarios.push_back({ThreatLevel::grey, {}, {AttackSpec::defaults(AttackKind::pgd_l1)}});
  c.scenarios.push_back({ThreatLevel::black, {"dnn"}, {AttackSpec::defaults(AttackKind::mimicry, ThreatLevel::black)}});
  const Json j = config_to_json(c);
  const ExperimentConfig back = config_from_json(j);
  EXPECT_EQ(config_to_json(back).dump(), j.dump());
  EXPECT_EQ(back.scenarios.size(), 2u);
  EXPECT_EQ(back.scenarios[1].defenses, std::vector<std::string>{"dnn"});
}

TEST(Config, RejectsUnknownAndInvalid) {
  EXPECT_THROW(config_from_json(Json::parse(R"({"sede": 1})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"purifier": {"alpha": 0.7, "beta": 0.4}})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"data": {"split": {"train": 0.5, "val": 0.2, "test": 0.2}}})")),
               ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"seed": "seven"})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(R"({"data": {"source": "web"}})")), ConfigError);
  EXPECT_THROW(config_from_json(Json::parse(
                   R"({"evaluation": {"scenarios": [{"level": "grey", "attacks": [{"kind": "pgd_l1", "stpe": 1}]}]}})")),
               ConfigError);
  EXPECT_THROW(config_from_json(
                   Json::parse(R"({"evaluation": {"scenarios": [{"level": "grey", "attacks": [{"kind": "nope"}]}]}})")),
               ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, SeedsAreDerivedPerComponent) {
  ExperimentConfig a, b;
  b.seed = 8;
  EXPECT_NE(a.seed_for("detector"), a.seed_for("purifier"));
  EXPECT_NE(a.seed_for("detector"), b.seed_for("detector"));
  EXPECT_EQ(a.seed_for("detector"), ExperimentConfig{}.seed_for("detector"));
}

TEST(Firewall, GreyScenarioRejectsWhiteAttackBeforeRunning) {
  EXPECT_THROW(ThreatScenario(ThreatLevel::grey, {AttackSpec::defaults(AttackKind::pgd_l1, ThreatLevel::white)}),
               CapabilityError);
  EXPECT_THROW(ThreatScenario(ThreatLevel::black, {AttackSpec::defaults(AttackKind::bca, ThreatLevel::black)}),
               CapabilityError);
  EXPECT_NO_THROW(ThreatScenario(ThreatLevel::black, {AttackSpec::defaults(AttackKind::pointwise, ThreatLevel::black)}));
  EXPECT_THROW(config_from_json(Json::parse(
                   R"({"evaluation": {"scenarios": [{"level": "black", "attacks": [{"kind": "pgd_linf"}]}]}})"))
                   .scenarios,
               CapabilityError);
}

namespace {

struct Fixture {
  LabeledDataset test;
  Matrix pool;
  DetectorModel det;
  PurifierModel pur;
};

Fixture fixture() {
  SyntheticConfig sc;
  sc.dim = 30;
  sc.n_benign = 60;
  sc.n_malicious = 60;
  sc.signal_features = 6;
  auto data = generate_synthetic(sc);
  DetectorArchitecture arch;
  arch.input_dim = 30;
  arch.hidden = {12};
  DetectorTrainConfig dc;
  dc.epochs = 15;
  dc.batch_size = 16;
  auto det = train_detector(data, data, dc, 1, arch);
  Matrix pool = data.with_label(Label::benign).features;
  return {std::move(data), std::move(pool), std::move(det), mptest::small_purifier(30, 3)};
}

}  // namespace

TEST(Scenario, NoAttackEqualsPlainEvaluation) {
  const auto f = fixture();
  const Pipeline pipe{&f.det, nullptr};
  EvaluationInputs in{&f.test, &f.pool, BoundsPolicy::add_only, 0, false};
  const auto rep = run_scenario(ThreatScenario(ThreatLevel::grey, {}), pipe, "dnn", in, 5);
  const auto m = compute_metrics(f.det.labels(f.test.features), f.test.labels);
  ASSERT_EQ(rep.rows.size(), 6u);
  // Rows are emitted in benign-first order; metrics are order independent.
  EXPECT_DOUBLE_EQ(rep.value("clean", "none", "dnn", "accuracy"), m.accuracy);
  EXPECT_DOUBLE_EQ(rep.value("clean", "none", "dnn", "fpr"), m.fpr);
  EXPECT_DOUBLE_EQ(rep.value("clean", "none", "dnn", "f1"), m.f1);
  EXPECT_DOUBLE_EQ(rep.value("clean", "none", "dnn", "robust_accuracy"), 1.0 - m.fnr);
}

TEST(Scenario, BenignSamplesAreNeverPerturbed) {
  const auto f = fixture();
  const Pipeline pipe{&f.det, nullptr};
  EvaluationInputs in{&f.test, &f.pool, BoundsPolicy::add_only, 0, false};
  const auto clean = run_scenario(ThreatScenario(ThreatLevel::grey, {}), pipe, "dnn", in, 5);
  AttackSpec a = AttackSpec::defaults(AttackKind::pgd_l1);
  a.iterations = 20;
  const auto att = run_scenario(ThreatScenario(ThreatLevel::grey, {a}), pipe, "dnn", in, 5);
  EXPECT_EQ(att.value("grey", "pgd_l1", "dnn", "fpr"), clean.value("clean", "none", "dnn", "fpr"));
  const Index n_mal = static_cast<Index>(f.test.indices_of(Label::malicious).size());
  EXPECT_EQ(static_cast<Index>(att.audit.size()), n_mal);
  Index kept = 0;
  for (const auto& e : att.audit) kept += e.pipeline_evaded ? 0 : 1;
  EXPECT_DOUBLE_EQ(att.value("grey", "pgd_l1", "dnn", "robust_accuracy"),
                   static_cast<double>(kept) / static_cast<double>(n_mal));
}

TEST(Scenario, MaxMalwareCapsAttackedSet) {
  const auto f = fixture();
  const Pipeline pipe{&f.det, &f.pur};
  EvaluationInputs in{&f.test, &f.pool, BoundsPolicy::add_only, 7, false};
  AttackSpec a = AttackSpec::defaults(AttackKind::salt_pepper, ThreatLevel::black);
  a.intensity_step = 0.05;
  const auto rep = run_scenario(ThreatScenario(ThreatLevel::black, {a}), pipe, "purifier", in, 1);
  EXPECT_EQ(rep.audit.size(), 7u);
}

TEST(Scenario, DeterministicReports) {
  const auto f = fixture();
  const Pipeline pipe{&f.det, &f.pur};
  EvaluationInputs in{&f.test, &f.pool, BoundsPolicy::add_only, 10, false};
  AttackSpec a = AttackSpec::defaults(AttackKind::stepwise_ma, ThreatLevel::white);
  a.iterations = 10;
  const ThreatScenario sc(ThreatLevel::white, {a, AttackSpec::defaults(AttackKind::mimicry, ThreatLevel::white)});
  std::ostringstream x, y;
  write_csv(x, run_scenario(sc, pipe, "purifier", in, 3));
  write_csv(y, run_scenario(sc, pipe, "purifier", in, 3));
  EXPECT_EQ(x.str(), y.str());
}

TEST(Report, CsvRoundTripIsExact) {
  EvaluationReport rep;
  rep.rows.push_back({"grey", "pgd_l1", "dnn", "robust_accuracy", 0.1 + 0.2, 42, 0.0});
  rep.rows.push_back({"clean", "none", "purifier", "f1", 1.0 / 3.0, 7, 1e-300});
  std::stringstream ss;
  write_csv(ss, rep);
  const auto back = read_csv(ss);
  ASSERT_EQ(back.rows.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.rows[i].value, rep.rows[i].value);
    EXPECT_EQ(back.rows[i].seed, rep.rows[i].seed);
    EXPECT_EQ(back.rows[i].runtime_s, rep.rows[i].runtime_s);
    EXPECT_EQ(back.rows[i].metric, rep.rows[i].metric);
  }
  std::stringstream bad("a,b\n");
  EXPECT_THROW(read_csv(bad), FormatError);
  EXPECT_EQ(report_to_json(rep)["rows"].size(), 2u);
}
