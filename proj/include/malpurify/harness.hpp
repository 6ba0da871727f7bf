#pragma once

// Experiment plumbing: JSON configuration, model training from a config,
// threat scenarios, and CSV / JSON / JSON-lines reports.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "malpurify/adversarial_training.hpp"
#include "malpurify/attacks.hpp"
#include "malpurify/detector.hpp"
#include "malpurify/features.hpp"
#include "malpurify/metrics.hpp"
#include "malpurify/purifier.hpp"

namespace malpurify {

using Json = nlohmann::json;

struct ScenarioConfig {
  ThreatLevel level = ThreatLevel::grey;
  std::vector<std::string> defenses;  // empty: the evaluation-wide list
  std::vector<AttackSpec> attacks;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;

  std::string data_source = "synthetic";  // or "file"
  std::string data_path;                  // sparse file when data_source == "file"
  SyntheticConfig synthetic{};
  SplitSpec split_spec{};

  DetectorArchitecture detector_arch{};
  DetectorTrainConfig detector_train{};
  DetectorArchitecture single_arch = [] {
    DetectorArchitecture a;
    a.hidden = {};
    return a;
  }();
  AdversarialTrainingConfig adversarial{};

  PurifierArchitecture purifier_arch{};
  PurifierTrainConfig purifier_train{};
  PurifierLossWeights loss_weights{};
  DiversificationConfig diversification{};
  NoiseConfig noise{};

  BoundsPolicy bounds = BoundsPolicy::add_only;
  std::vector<std::string> defenses = {"dnn", "purifier"};
  std::vector<ScenarioConfig> scenarios;
  Index max_malware = 0;  // 0: every test malware sample
  bool record_runtime = true;

  // Independent stream per component, all derived from the master seed.
  std::uint64_t seed_for(std::string_view component) const { return Rng(seed).fork(component).seed(); }
};

// ---------------------------------------------------------------------------
// JSON <-> config. Unknown keys are errors so typos never pass silently.

namespace detail {

inline void check_keys(const Json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, unused] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline AttackSpec attack_from_json(const Json& j, ThreatLevel level) {
  check_keys(j, "attack",
             {"kind", "iterations", "step", "restarts", "early_stop", "randomized_rounding", "l1_iterations",
              "l2_iterations", "l2_step", "linf_iterations", "linf_step", "intensity_step", "repeats",
              "query_budget", "max_add_rate", "n_guides"});
  if (!j.contains("kind")) throw ConfigError("attack: missing 'kind'");
  const AttackKind kind = parse_attack_kind(j.at("kind").get<std::string>());
  AttackSpec s = AttackSpec::defaults(kind, level);
  // Ensemble member settings feed the single-attack defaults as well.
  read(j, "l1_iterations", s.l1_iterations);
  read(j, "l2_iterations", s.l2_iterations);
  read(j, "l2_step", s.l2_step);
  read(j, "linf_iterations", s.linf_iterations);
  read(j, "linf_step", s.linf_step);
  read(j, "iterations", s.iterations);
  read(j, "step", s.step);
  read(j, "restarts", s.restarts);
  read(j, "randomized_rounding", s.randomized_rounding);
  read(j, "intensity_step", s.intensity_step);
  read(j, "repeats", s.repeats);
  read(j, "query_budget", s.query_budget);
  read(j, "max_add_rate", s.max_add_rate);
  read(j, "n_guides", s.n_guides);
  if (j.contains("early_stop")) s.early_stop = j.at("early_stop").get<bool>();
  s.validate();
  return s;
}

inline Json attack_to_json(const AttackSpec& s) {
  Json j{{"kind", to_string(s.kind)},
         {"iterations", s.iterations},
         {"step", s.step},
         {"restarts", s.restarts},
         {"randomized_rounding", s.randomized_rounding},
         {"l1_iterations", s.l1_iterations},
         {"l2_iterations", s.l2_iterations},
         {"l2_step", s.l2_step},
         {"linf_iterations", s.linf_iterations},
         {"linf_step", s.linf_step},
         {"intensity_step", s.intensity_step},
         {"repeats", s.repeats},
         {"query_budget", s.query_budget},
         {"max_add_rate", s.max_add_rate},
         {"n_guides", s.n_guides}};
  if (s.early_stop) j["early_stop"] = *s.early_stop;
  return j;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& j) {
  using detail::check_keys;
  using detail::read;
  check_keys(j, "config", {"seed", "data", "detector", "single_detector", "adversarial_training", "purifier",
                           "bounds", "evaluation"});
  ExperimentConfig c;
  read(j, "seed", c.seed);
  if (j.contains("bounds")) c.bounds = parse_bounds_policy(j.at("bounds").get<std::string>());

  if (j.contains("data")) {
    const Json& d = j.at("data");
    check_keys(d, "data", {"source", "path", "synthetic", "split"});
    read(d, "source", c.data_source);
    read(d, "path", c.data_path);
    if (c.data_source != "synthetic" && c.data_source != "file")
      throw ConfigError("data.source must be 'synthetic' or 'file'");
    if (d.contains("synthetic")) {
      const Json& s = d.at("synthetic");
      check_keys(s, "data.synthetic",
                 {"n_benign", "n_malicious", "dim", "signal_features", "noise_rate", "signal_rate",
                  "background_rate"});
      read(s, "n_benign", c.synthetic.n_benign);
      read(s, "n_malicious", c.synthetic.n_malicious);
      read(s, "dim", c.synthetic.dim);
      read(s, "signal_features", c.synthetic.signal_features);
      read(s, "noise_rate", c.synthetic.noise_rate);
      read(s, "signal_rate", c.synthetic.signal_rate);
      read(s, "background_rate", c.synthetic.background_rate);
    }
    if (d.contains("split")) {
      const Json& s = d.at("split");
      check_keys(s, "data.split", {"train", "val", "test"});
      read(s, "train", c.split_spec.train);
      read(s, "val", c.split_spec.val);
      read(s, "test", c.split_spec.test);
    }
  }

  auto read_detector = [](const Json& d, const char* where, DetectorArchitecture& arch, DetectorTrainConfig& tr) {
    check_keys(d, where, {"hidden", "feature_layer", "threshold", "epochs", "batch_size", "learning_rate"});
    read(d, "hidden", arch.hidden);
    read(d, "feature_layer", arch.feature_layer);
    read(d, "threshold", arch.threshold);
    read(d, "epochs", tr.epochs);
    read(d, "batch_size", tr.batch_size);
    read(d, "learning_rate", tr.adam.learning_rate);
  };
  if (j.contains("detector")) read_detector(j.at("detector"), "detector", c.detector_arch, c.detector_train);
  DetectorTrainConfig single_train = c.detector_train;
  if (j.contains("single_detector")) {
    read_detector(j.at("single_detector"), "single_detector", c.single_arch, single_train);
    if (single_train.epochs != c.detector_train.epochs || single_train.batch_size != c.detector_train.batch_size ||
        single_train.adam.learning_rate != c.detector_train.adam.learning_rate)
      throw ConfigError("single_detector: training settings are shared with 'detector'");
  }
  if (j.contains("adversarial_training")) {
    const Json& a = j.at("adversarial_training");
    check_keys(a, "adversarial_training", {"iterations", "step"});
    read(a, "iterations", c.adversarial.iterations);
    read(a, "step", c.adversarial.step);
  }
  c.adversarial.bounds = c.bounds;

  if (j.contains("purifier")) {
    const Json& p = j.at("purifier");
    check_keys(p, "purifier",
               {"encoder", "decoder", "attention", "epochs", "batch_size", "learning_rate", "samples_per_source",
                "feature_layer", "alpha", "beta", "diversification", "noise"});
    read(p, "encoder", c.purifier_arch.encoder);
    read(p, "decoder", c.purifier_arch.decoder);
    read(p, "attention", c.purifier_arch.attention);
    read(p, "epochs", c.purifier_train.epochs);
    read(p, "batch_size", c.purifier_train.batch_size);
    read(p, "learning_rate", c.purifier_train.adam.learning_rate);
    read(p, "samples_per_source", c.purifier_train.samples_per_source);
    read(p, "feature_layer", c.purifier_train.feature_layer);
    read(p, "alpha", c.loss_weights.alpha);
    read(p, "beta", c.loss_weights.beta);
    if (p.contains("diversification")) {
      const Json& d = p.at("diversification");
      check_keys(d, "purifier.diversification", {"batches", "iterations", "step"});
      read(d, "batches", c.diversification.batches);
      read(d, "iterations", c.diversification.iterations);
      read(d, "step", c.diversification.step);
    }
    if (p.contains("noise")) {
      const Json& n = p.at("noise");
      check_keys(n, "purifier.noise", {"eta"});
      read(n, "eta", c.noise.eta);
    }
    c.diversification.feature_layer = c.purifier_train.feature_layer;
  }

  if (j.contains("evaluation")) {
    const Json& e = j.at("evaluation");
    check_keys(e, "evaluation", {"defenses", "scenarios", "max_malware", "record_runtime"});
    read(e, "defenses", c.defenses);
    read(e, "max_malware", c.max_malware);
    read(e, "record_runtime", c.record_runtime);
    if (e.contains("scenarios")) {
      for (const Json& s : e.at("scenarios")) {
        check_keys(s, "evaluation.scenarios[]", {"level", "defenses", "attacks"});
        ScenarioConfig sc;
        if (!s.contains("level")) throw ConfigError("scenario: missing 'level'");
        sc.level = parse_threat_level(s.at("level").get<std::string>());
        read(s, "defenses", sc.defenses);
        if (s.contains("attacks"))
          for (const Json& a : s.at("attacks")) {
            sc.attacks.push_back(detail::attack_from_json(a, sc.level));
            check_capability(sc.attacks.back(), sc.level);
          }
        c.scenarios.push_back(std::move(sc));
      }
    }
  }
  c.loss_weights.validate();
  const double total = c.split_spec.train + c.split_spec.val + c.split_spec.test;
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("data.split fractions must sum to 1");
  return c;
}

inline Json config_to_json(const ExperimentConfig& c) {
  Json scenarios = Json::array();
  for (const auto& s : c.scenarios) {
    Json attacks = Json::array();
    for (const auto& a : s.attacks) attacks.push_back(detail::attack_to_json(a));
    Json js{{"level", to_string(s.level)}, {"attacks", attacks}};
    if (!s.defenses.empty()) js["defenses"] = s.defenses;
    scenarios.push_back(js);
  }
  return Json{
      {"seed", c.seed},
      {"bounds", to_string(c.bounds)},
      {"data",
       {{"source", c.data_source},
        {"path", c.data_path},
        {"synthetic",
         {{"n_benign", c.synthetic.n_benign},
          {"n_malicious", c.synthetic.n_malicious},
          {"dim", c.synthetic.dim},
          {"signal_features", c.synthetic.signal_features},
          {"noise_rate", c.synthetic.noise_rate},
          {"signal_rate", c.synthetic.signal_rate},
          {"background_rate", c.synthetic.background_rate}}},
        {"split", {{"train", c.split_spec.train}, {"val", c.split_spec.val}, {"test", c.split_spec.test}}}}},
      {"detector",
       {{"hidden", c.detector_arch.hidden},
        {"feature_layer", c.detector_arch.feature_layer},
        {"threshold", c.detector_arch.threshold},
        {"epochs", c.detector_train.epochs},
        {"batch_size", c.detector_train.batch_size},
        {"learning_rate", c.detector_train.adam.learning_rate}}},
      {"single_detector", {{"hidden", c.single_arch.hidden}, {"threshold", c.single_arch.threshold}}},
      {"adversarial_training", {{"iterations", c.adversarial.iterations}, {"step", c.adversarial.step}}},
      {"purifier",
       {{"encoder", c.purifier_arch.encoder},
        {"decoder", c.purifier_arch.decoder},
        {"attention", c.purifier_arch.attention},
        {"epochs", c.purifier_train.epochs},
        {"batch_size", c.purifier_train.batch_size},
        {"learning_rate", c.purifier_train.adam.learning_rate},
        {"samples_per_source", c.purifier_train.samples_per_source},
        {"feature_layer", c.purifier_train.feature_layer},
        {"alpha", c.loss_weights.alpha},
        {"beta", c.loss_weights.beta},
        {"diversification",
         {{"batches", c.diversification.batches},
          {"iterations", c.diversification.iterations},
          {"step", c.diversification.step}}},
        {"noise", {{"eta", c.noise.eta}}}}},
      {"evaluation",
       {{"defenses", c.defenses},
        {"scenarios", scenarios},
        {"max_malware", c.max_malware},
        {"record_runtime", c.record_runtime}}},
  };
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return config_from_json(Json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data and models from a config

inline LabeledDataset load_dataset(const ExperimentConfig& c) {
  if (c.data_source == "file") {
    if (c.data_path.empty()) throw ConfigError("data.path is required for file datasets");
    return load_sparse(c.data_path);
  }
  SyntheticConfig s = c.synthetic;
  s.seed = c.seed_for("synthetic");
  return generate_synthetic(s);
}

inline Splits make_splits(const ExperimentConfig& c, const LabeledDataset& ds) {
  SplitSpec s = c.split_spec;
  s.seed = c.seed_for("split");
  return split(ds, s);
}

enum class DetectorKind { dnn, single, adversarial };

inline DetectorKind parse_detector_kind(std::string_view s) {
  if (s == "dnn") return DetectorKind::dnn;
  if (s == "single") return DetectorKind::single;
  if (s == "at") return DetectorKind::adversarial;
  throw ConfigError("unknown detector kind '" + std::string(s) + "' (dnn | single | at)");
}

inline DetectorModel train_detector_from_config(const ExperimentConfig& c, const Splits& s, DetectorKind kind) {
  switch (kind) {
    case DetectorKind::dnn:
      return fit_detector(s.train, s.val, c.detector_arch, c.detector_train, c.seed_for("detector"));
    case DetectorKind::single:
      return fit_detector(s.train, s.val, c.single_arch, c.detector_train, c.seed_for("single-detector"));
    case DetectorKind::adversarial:
      return train_detector_adversarial(s.train, s.val, c.detector_train, c.adversarial, c.seed_for("at-detector"),
                                        c.detector_arch);
  }
  throw ConfigError("bad detector kind");
}

// Alg. 1 on training malware, Alg. 2 on training benign, all training samples
// as clean pairs. Labels only pick the sources; the fit itself never sees them.
inline PurifierFit train_purifier_from_config(const ExperimentConfig& c, const Splits& s,
                                              const DetectorModel& detector) {
  DiversificationConfig dv = c.diversification;
  dv.seed = c.seed_for("diversify");
  NoiseConfig nz = c.noise;
  nz.seed = c.seed_for("noise");
  const auto adversarial = diversify_malware(s.train.with_label(Label::malicious).features, detector, dv);
  const auto noisy = inject_protective_noise(s.train.with_label(Label::benign).features, nz);
  return train_purifier(adversarial.pairs, noisy, s.train, detector, c.loss_weights, c.purifier_train,
                        c.seed_for("purifier"), c.purifier_arch);
}

// ---------------------------------------------------------------------------
// Scenarios

// A threat level plus the attacks run under it. Construction rejects any
// attack whose capabilities exceed the level, before anything is computed.
class ThreatScenario {
 public:
  ThreatScenario(ThreatLevel level, std::vector<AttackSpec> attacks) : level_(level), attacks_(std::move(attacks)) {
    for (const AttackSpec& a : attacks_) check_capability(a, level_);
  }

  ThreatLevel level() const { return level_; }
  const std::vector<AttackSpec>& attacks() const { return attacks_; }

 private:
  ThreatLevel level_;
  std::vector<AttackSpec> attacks_;
};

struct ReportRow {
  std::string scenario;
  std::string attack;
  std::string defense;
  std::string metric;
  double value = 0;
  std::uint64_t seed = 0;
  double runtime_s = 0;
};

struct AuditEntry {
  std::string scenario;
  std::string attack;
  std::string defense;
  Index sample = 0;
  Index iterations = 0;
  Index queries = 0;
  Index flips = 0;
  bool success = false;         // evaded the system the attacker targeted
  bool pipeline_evaded = false;  // evaded the deployed system
};

struct EvaluationReport {
  std::vector<ReportRow> rows;
  std::vector<AuditEntry> audit;

  void append(EvaluationReport&& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    audit.insert(audit.end(), other.audit.begin(), other.audit.end());
  }

  // First row matching all given fields; throws if absent.
  double value(std::string_view scenario, std::string_view attack, std::string_view defense,
               std::string_view metric) const {
    for (const auto& r : rows)
      if (r.scenario == scenario && r.attack == attack && r.defense == defense && r.metric == metric) return r.value;
    throw ConfigError("report has no row " + std::string(scenario) + "/" + std::string(attack) + "/" +
                      std::string(defense) + "/" + std::string(metric));
  }
};

struct EvaluationInputs {
  const LabeledDataset* test = nullptr;
  const Matrix* benign_pool = nullptr;  // mimicry guides (training benign)
  BoundsPolicy bounds = BoundsPolicy::add_only;
  Index max_malware = 0;
  bool record_runtime = true;
};

namespace detail {

inline void add_metric_rows(EvaluationReport& rep, const std::string& scenario, const std::string& attack,
                            const std::string& defense, std::uint64_t seed, double runtime,
                            const std::vector<Label>& predicted, const std::vector<Label>& labels,
                            double robust_accuracy) {
  const MetricSet m = compute_metrics(predicted, labels);
  for (const auto& [name, value] : std::initializer_list<std::pair<const char*, double>>{
           {"fpr", m.fpr},
           {"fnr", m.fnr},
           {"accuracy", m.accuracy},
           {"balanced_accuracy", m.balanced_accuracy},
           {"f1", m.f1},
           {"robust_accuracy", robust_accuracy}})
    rep.rows.push_back({scenario, attack, defense, name, value, seed, runtime});
}

}  // namespace detail

// Attacks only the test malware; benign samples are evaluated unmodified.
// Robust accuracy is the fraction of attacked malware the deployed pipeline
// still labels malicious. Without attacks the clean rows are emitted.
inline EvaluationReport run_scenario(const ThreatScenario& scenario, const Pipeline& deployed,
                                     const std::string& defense, const EvaluationInputs& in, std::uint64_t seed) {
  if (!in.test || in.test->empty()) throw ConfigError("run_scenario: empty test set");
  const LabeledDataset& test = *in.test;
  std::vector<Index> mal = test.indices_of(Label::malicious);
  if (in.max_malware > 0 && static_cast<Index>(mal.size()) > in.max_malware) mal.resize(in.max_malware);
  Matrix x_mal(static_cast<Index>(mal.size()), test.dim());
  for (std::size_t k = 0; k < mal.size(); ++k) x_mal.row(static_cast<Index>(k)) = test.features.row(mal[k]);

  // Evaluated set: every benign sample plus the (possibly capped) malware.
  std::vector<Index> rows = test.indices_of(Label::benign);
  rows.insert(rows.end(), mal.begin(), mal.end());
  const LabeledDataset evaluated = test.subset(rows);
  const Index n_benign = evaluated.size() - static_cast<Index>(mal.size());
  const std::string level(to_string(scenario.level()));

  auto timer = [&](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return in.record_runtime ? s : 0.0;
  };

  EvaluationReport rep;
  const std::vector<Label> clean_pred = deployed.labels(evaluated.features);
  auto robust = [&](const std::vector<Label>& pred) {
    if (mal.empty()) return 0.0;
    Index kept = 0;
    for (std::size_t k = static_cast<std::size_t>(n_benign); k < pred.size(); ++k)
      kept += pred[k] == Label::malicious ? 1 : 0;
    return static_cast<double>(kept) / static_cast<double>(mal.size());
  };
  if (scenario.attacks().empty()) {
    detail::add_metric_rows(rep, "clean", "none", defense, seed, 0.0, clean_pred, evaluated.labels,
                            robust(clean_pred));
    return rep;
  }

  const ManipulationBounds bounds = default_bounds(x_mal, in.bounds);
  const AttackSurface surface = AttackSurface::for_level(scenario.level(), deployed);
  for (const AttackSpec& base : scenario.attacks()) {
    AttackSpec spec = base;
    spec.seed = Rng(seed).fork(to_string(spec.kind)).seed();
    std::vector<AttackResult> results;
    const double runtime = timer([&] {
      if (!mal.empty()) results = run_attack(x_mal, bounds, spec, surface, AttackContext{in.benign_pool});
    });
    Matrix attacked = evaluated.features;
    for (std::size_t k = 0; k < results.size(); ++k) {
      if (!validate_adversarial(results[k].original, results[k].adversarial,
                                ManipulationBounds{bounds.lower.row(static_cast<Index>(k)),
                                                   bounds.upper.row(static_cast<Index>(k))}))
        throw ShapeError("run_scenario: attack produced an invalid sample");
      attacked.row(n_benign + static_cast<Index>(k)) = results[k].adversarial.transpose();
    }
    const std::vector<Label> pred = deployed.labels(attacked);
    const std::string attack(to_string(spec.kind));
    detail::add_metric_rows(rep, level, attack, defense, seed, runtime, pred, evaluated.labels, robust(pred));
    double flips = 0;
    Index success = 0;
    for (std::size_t k = 0; k < results.size(); ++k) {
      const auto& r = results[k];
      flips += static_cast<double>(r.flips);
      success += r.success ? 1 : 0;
      rep.audit.push_back({level, attack, defense, mal[k], r.iterations, r.queries, r.flips, r.success,
                           pred[static_cast<std::size_t>(n_benign) + k] == Label::benign});
    }
    const double denom = results.empty() ? 1.0 : static_cast<double>(results.size());
    rep.rows.push_back({level, attack, defense, "attack_success_rate", static_cast<double>(success) / denom, seed,
                        runtime});
    rep.rows.push_back({level, attack, defense, "mean_flips", flips / denom, seed, runtime});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Report files

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(std::ostream& out, const EvaluationReport& rep) {
  out << "scenario,attack,defense,metric,value,seed,runtime_s\n";
  for (const auto& r : rep.rows)
    out << r.scenario << ',' << r.attack << ',' << r.defense << ',' << r.metric << ',' << format_real(r.value) << ','
        << r.seed << ',' << format_real(r.runtime_s) << '\n';
}

inline Json report_to_json(const EvaluationReport& rep) {
  Json rows = Json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"scenario", r.scenario},
                    {"attack", r.attack},
                    {"defense", r.defense},
                    {"metric", r.metric},
                    {"value", r.value},
                    {"seed", r.seed},
                    {"runtime_s", r.runtime_s}});
  return Json{{"rows", rows}};
}

inline void write_audit(std::ostream& out, const EvaluationReport& rep) {
  for (const auto& a : rep.audit)
    out << Json{{"scenario", a.scenario},
                {"attack", a.attack},
                {"defense", a.defense},
                {"sample", a.sample},
                {"iterations", a.iterations},
                {"queries", a.queries},
                {"flips", a.flips},
                {"success", a.success},
                {"pipeline_evaded", a.pipeline_evaded}}
               .dump()
        << '\n';
}

inline EvaluationReport read_csv(std::istream& in) {
  EvaluationReport rep;
  std::string line;
  if (!std::getline(in, line) || line != "scenario,attack,defense,metric,value,seed,runtime_s")
    throw FormatError("report: bad CSV header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw FormatError("report: bad CSV row '" + line + "'");
    rep.rows.push_back({f[0], f[1], f[2], f[3], std::stod(f[4]), std::stoull(f[5]), std::stod(f[6])});
  }
  return rep;
}

}  // namespace malpurify
