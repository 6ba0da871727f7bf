// malpurify: data generation, training, attacks and evaluation from a JSON config.
//
// Exit codes: 0 ok, 1 usage/config error, 2 invariant violation, 3 reproducibility mismatch.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>

#include "malpurify/harness.hpp"

namespace fs = std::filesystem;
using namespace malpurify;

namespace {

struct Common {
  std::string config;
  std::string workdir = "run";
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  app->add_option("-w,--workdir", c.workdir, "artifact directory");
  app->add_option("--seed", c.seed, "override the config master seed");
  app->add_flag("--force", c.force, "overwrite existing artifacts");
}

ExperimentConfig config_of(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path artifact(const Common& c, const std::string& name) { return fs::path(c.workdir) / name; }

void claim(const Common& c, const fs::path& p) {
  if (fs::exists(p) && !c.force) throw ConfigError(p.string() + " exists (use --force to overwrite)");
  fs::create_directories(p.parent_path());
}

fs::path require(const fs::path& p, const char* hint) {
  if (!fs::exists(p)) throw ConfigError(p.string() + " not found; run " + hint + " first");
  return p;
}

Splits splits_of(const Common& c, const ExperimentConfig& cfg) {
  return make_splits(cfg, load_sparse(require(artifact(c, "dataset.svm"), "gen-data").string()));
}

std::string detector_file(DetectorKind k) {
  switch (k) {
    case DetectorKind::dnn: return "detector_dnn.ckpt";
    case DetectorKind::single: return "detector_single.ckpt";
    case DetectorKind::adversarial: return "detector_at.ckpt";
  }
  return "";
}

DetectorModel load_detector(const Common& c, DetectorKind k) {
  return DetectorModel::from_checkpoint(
      load_checkpoint(require(artifact(c, detector_file(k)), "train-detector").string(), "detector"));
}

PurifierModel load_purifier(const Common& c) {
  return PurifierModel::from_checkpoint(
      load_checkpoint(require(artifact(c, "purifier.ckpt"), "train-purifier").string(), "purifier"));
}

// Defense names: dnn, purifier (purifier + dnn), single, single_purifier, at.
struct Deployment {
  std::map<DetectorKind, DetectorModel> detectors;
  std::optional<PurifierModel> purifier;
  const Common* common = nullptr;

  Pipeline get(const std::string& defense) {
    auto det = [&](DetectorKind k) -> const DetectorModel* {
      auto it = detectors.find(k);
      if (it == detectors.end()) it = detectors.emplace(k, load_detector(*common, k)).first;
      return &it->second;
    };
    auto pur = [&]() -> const PurifierModel* {
      if (!purifier) purifier = load_purifier(*common);
      return &*purifier;
    };
    if (defense == "dnn") return {det(DetectorKind::dnn), nullptr};
    if (defense == "purifier") return {det(DetectorKind::dnn), pur()};
    if (defense == "single") return {det(DetectorKind::single), nullptr};
    if (defense == "single_purifier") return {det(DetectorKind::single), pur()};
    if (defense == "at") return {det(DetectorKind::adversarial), nullptr};
    throw ConfigError("unknown defense '" + defense + "' (dnn | purifier | single | single_purifier | at)");
  }
};

template <typename Fn>
void write_file(const Common& c, const fs::path& p, Fn&& fn) {
  claim(c, p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write " + p.string());
  fn(out);
  if (!out) throw FormatError("write failed: " + p.string());
  std::cout << "wrote " << p.string() << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

int gen_data(const Common& c) {
  const auto cfg = config_of(c);
  const auto ds = load_dataset(cfg);
  const fs::path p = artifact(c, "dataset.svm");
  write_file(c, p, [&](std::ostream& out) { write_sparse(out, ds); });
  std::cout << "samples " << ds.size() << " dim " << ds.dim() << '\n';
  return 0;
}

int train_detector_cmd(const Common& c, const std::string& kind_name) {
  const auto cfg = config_of(c);
  const DetectorKind kind = parse_detector_kind(kind_name);
  const fs::path p = artifact(c, detector_file(kind));
  claim(c, p);
  const auto s = splits_of(c, cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto det = train_detector_from_config(cfg, s, kind);
  const double t = seconds_since(t0);
  write_file(c, p, [&](std::ostream& out) { write_checkpoint(out, det.to_checkpoint()); });
  std::cout << "train_s " << t << " test_accuracy " << accuracy(det, s.test) << '\n';
  return 0;
}

int train_purifier_cmd(const Common& c) {
  const auto cfg = config_of(c);
  const fs::path p = artifact(c, "purifier.ckpt");
  claim(c, p);
  const auto s = splits_of(c, cfg);
  const auto det = load_detector(c, DetectorKind::dnn);
  const auto t0 = std::chrono::steady_clock::now();
  const auto fit = train_purifier_from_config(cfg, s, det);
  const double t = seconds_since(t0);
  write_file(c, p, [&](std::ostream& out) { write_checkpoint(out, fit.model.to_checkpoint()); });
  std::cout << "train_s " << t << " final_loss " << format_real(fit.history.empty() ? 0.0 : fit.history.back().loss)
            << " pipeline_test_accuracy "
            << compute_metrics(Pipeline{&det, &fit.model}.labels(s.test.features), s.test.labels).accuracy << '\n';
  return 0;
}

// Runs one attack on the test malware and writes the adversarial set plus its audit log.
int attack_cmd(const Common& c, const std::string& level_name, const std::string& kind_name,
               const std::string& defense) {
  const auto cfg = config_of(c);
  const ThreatLevel level = parse_threat_level(level_name);
  AttackSpec spec = AttackSpec::defaults(parse_attack_kind(kind_name), level);
  // Settings of a matching attack in the config take precedence.
  for (const auto& sc : cfg.scenarios)
    for (const auto& a : sc.attacks)
      if (sc.level == level && a.kind == spec.kind) spec = a;
  const ThreatScenario scenario(level, {spec});
  const std::string stem = "attack_" + level_name + "_" + kind_name + "_" + defense;
  const fs::path adv_path = artifact(c, stem + ".svm"), log_path = artifact(c, stem + ".jsonl");
  claim(c, adv_path);
  claim(c, log_path);

  const auto s = splits_of(c, cfg);
  Deployment dep{.common = &c};
  const Pipeline pipe = dep.get(defense);
  LabeledDataset mal = s.test.with_label(Label::malicious);
  if (cfg.max_malware > 0 && mal.size() > cfg.max_malware) {
    std::vector<Index> first(static_cast<std::size_t>(cfg.max_malware));
    std::iota(first.begin(), first.end(), Index{0});
    mal = mal.subset(first);
  }
  spec.seed = Rng(cfg.seed_for("attack")).fork(to_string(spec.kind)).seed();
  const Matrix pool = s.train.with_label(Label::benign).features;
  const auto bounds = default_bounds(mal.features, cfg.bounds);
  const auto res = run_attack(mal.features, bounds, spec, AttackSurface::for_level(level, pipe), AttackContext{&pool});

  LabeledDataset adv = mal;
  Index evaded = 0;
  for (std::size_t k = 0; k < res.size(); ++k) {
    if (!validate_adversarial(res[k].original, res[k].adversarial,
                              bounds.rows_at(std::vector<Index>{static_cast<Index>(k)})))
      throw ShapeError("attack produced an invalid sample");
    adv.features.row(static_cast<Index>(k)) = res[k].adversarial.transpose();
  }
  const auto labels = pipe.labels(adv.features);
  for (Label l : labels) evaded += l == Label::benign ? 1 : 0;
  write_file(c, adv_path, [&](std::ostream& out) { write_sparse(out, adv); });
  write_file(c, log_path, [&](std::ostream& out) {
    for (std::size_t k = 0; k < res.size(); ++k)
      out << Json{{"sample", k},
                  {"iterations", res[k].iterations},
                  {"queries", res[k].queries},
                  {"flips", res[k].flips},
                  {"success", res[k].success},
                  {"pipeline_evaded", labels[k] == Label::benign}}
                 .dump()
          << '\n';
  });
  std::cout << "robust_accuracy "
            << format_real(res.empty() ? 0.0 : 1.0 - static_cast<double>(evaded) / static_cast<double>(res.size()))
            << '\n';
  return 0;
}

int eval_cmd(const Common& c) {
  const auto cfg = config_of(c);
  const fs::path csv = artifact(c, "report.csv"), json = artifact(c, "report.json"), audit = artifact(c, "audit.jsonl");
  for (const auto& p : {csv, json, audit}) claim(c, p);
  // Capability checks happen before any model is touched.
  std::vector<ThreatScenario> scenarios;
  for (const auto& sc : cfg.scenarios) scenarios.emplace_back(sc.level, sc.attacks);

  const auto s = splits_of(c, cfg);
  const Matrix pool = s.train.with_label(Label::benign).features;
  const EvaluationInputs in{&s.test, &pool, cfg.bounds, cfg.max_malware, cfg.record_runtime};
  Deployment dep{.common = &c};
  EvaluationReport rep;
  const std::uint64_t seed = cfg.seed_for("evaluation");
  for (const auto& d : cfg.defenses) rep.append(run_scenario(ThreatScenario(ThreatLevel::grey, {}), dep.get(d), d, in, seed));
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& defenses = cfg.scenarios[i].defenses.empty() ? cfg.defenses : cfg.scenarios[i].defenses;
    for (const auto& d : defenses) {
      std::cerr << to_string(scenarios[i].level()) << " / " << d << '\n';
      rep.append(run_scenario(scenarios[i], dep.get(d), d, in, seed));
    }
  }
  write_file(c, csv, [&](std::ostream& out) { write_csv(out, rep); });
  write_file(c, json, [&](std::ostream& out) { out << report_to_json(rep).dump(2) << '\n'; });
  write_file(c, audit, [&](std::ostream& out) { write_audit(out, rep); });
  return 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

// Byte comparison of two files, or of every file present in either of two directories.
int compare(const fs::path& a, const fs::path& b) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(a) && fs::is_directory(b)) {
    std::set<fs::path> names;
    for (const auto& root : {a, b})
      for (const auto& e : fs::directory_iterator(root))
        if (e.is_regular_file()) names.insert(e.path().filename());
    for (const auto& n : names) pairs.emplace_back(a / n, b / n);
  } else {
    pairs.emplace_back(a, b);
  }
  int bad = 0;
  for (const auto& [x, y] : pairs) {
    const bool same = fs::exists(x) && fs::exists(y) && slurp(x) == slurp(y);
    std::cout << (same ? "same     " : "DIFFERS  ") << x.filename().string() << '\n';
    bad += same ? 0 : 1;
  }
  return bad == 0 ? 0 : 3;
}

int report_cmd(const std::string& path, const std::string& metric) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open report " + path);
  const auto rep = read_csv(in);
  std::printf("%-8s %-14s %-16s %s\n", "scenario", "attack", "defense", metric.c_str());
  for (const auto& r : rep.rows)
    if (r.metric == metric)
      std::printf("%-8s %-14s %-16s %.4f\n", r.scenario.c_str(), r.attack.c_str(), r.defense.c_str(), r.value);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"malpurify: adversarial purification lab for binary-feature malware detectors"};
  app.require_subcommand(1);

  Common common;
  std::string kind = "dnn", level = "grey", attack_kind = "pgd_l1", defense = "dnn", report_path, metric =
                                                                                                      "robust_accuracy";
  std::vector<std::string> compare_paths;

  auto* gen = app.add_subcommand("gen-data", "generate or import the dataset");
  auto* tdet = app.add_subcommand("train-detector", "train a detector");
  tdet->add_option("--kind", kind, "dnn | single | at");
  auto* tpur = app.add_subcommand("train-purifier", "train the purifier against the dnn detector");
  auto* att = app.add_subcommand("attack", "attack the test malware under one defense");
  att->add_option("--level", level, "black | grey | white");
  att->add_option("--attack", attack_kind, "attack kind");
  att->add_option("--defense", defense, "dnn | purifier | single | single_purifier | at");
  auto* ev = app.add_subcommand("eval", "run every configured scenario and write the report");
  for (auto* sub : {gen, tdet, tpur, att, ev}) add_common(sub, common);
  auto* rep = app.add_subcommand("report", "print a report or compare artifacts");
  rep->add_option("path", report_path, "report CSV to print");
  rep->add_option("--metric", metric, "metric to tabulate");
  rep->add_option("--compare", compare_paths, "two files or directories that must be byte-identical")
      ->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(common);
    if (*tdet) return train_detector_cmd(common, kind);
    if (*tpur) return train_purifier_cmd(common);
    if (*att) return attack_cmd(common, level, attack_kind, defense);
    if (*ev) return eval_cmd(common);
    if (*rep) {
      if (!compare_paths.empty()) return compare(compare_paths[0], compare_paths[1]);
      if (report_path.empty()) throw ConfigError("report: give a CSV path or --compare A B");
      return report_cmd(report_path, metric);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const CapabilityError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const StaleTapeError& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
