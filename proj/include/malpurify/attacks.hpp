#pragma once

// Evasion attacks on binary feature vectors. Every attack works on a batch of
// malware rows with a per-row manipulation box and returns one AttackResult
// per row. What an attack may look at is decided by its AttackSurface:
//   black - scores of the deployed system, no gradients
//   grey  - the bare detector (scores and gradients); the purifier is unknown
//   white - the deployed purifier+detector composition, gradients included

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "malpurify/detector.hpp"
#include "malpurify/errors.hpp"
#include "malpurify/features.hpp"
#include "malpurify/numeric.hpp"
#include "malpurify/purifier.hpp"
#include "malpurify/rng.hpp"

namespace malpurify {

enum class ThreatLevel { black, grey, white };

inline std::string_view to_string(ThreatLevel l) {
  switch (l) {
    case ThreatLevel::black: return "black";
    case ThreatLevel::grey: return "grey";
    case ThreatLevel::white: return "white";
  }
  return "?";
}

inline ThreatLevel parse_threat_level(std::string_view s) {
  if (s == "black") return ThreatLevel::black;
  if (s == "grey") return ThreatLevel::grey;
  if (s == "white") return ThreatLevel::white;
  throw ConfigError("unknown threat level '" + std::string(s) + "'");
}

enum class AttackKind {
  pgd_l1,
  pgd_l2,
  pgd_linf,
  rfgsm,
  bca,
  grosse,
  salt_pepper,
  pointwise,
  max_ma,
  imax_ma,
  stepwise_ma,
  mimicry,
  random_add,
};

inline constexpr std::array<std::pair<AttackKind, std::string_view>, 13> kAttackNames{{
    {AttackKind::pgd_l1, "pgd_l1"},
    {AttackKind::pgd_l2, "pgd_l2"},
    {AttackKind::pgd_linf, "pgd_linf"},
    {AttackKind::rfgsm, "rfgsm"},
    {AttackKind::bca, "bca"},
    {AttackKind::grosse, "grosse"},
    {AttackKind::salt_pepper, "salt_pepper"},
    {AttackKind::pointwise, "pointwise"},
    {AttackKind::max_ma, "max_ma"},
    {AttackKind::imax_ma, "imax_ma"},
    {AttackKind::stepwise_ma, "stepwise_ma"},
    {AttackKind::mimicry, "mimicry"},
    {AttackKind::random_add, "random_add"},
}};

inline std::string_view to_string(AttackKind k) {
  for (const auto& [kind, name] : kAttackNames)
    if (kind == k) return name;
  return "?";
}

inline AttackKind parse_attack_kind(std::string_view s) {
  for (const auto& [kind, name] : kAttackNames)
    if (name == s) return kind;
  throw ConfigError("unknown attack '" + std::string(s) + "'");
}

inline bool needs_gradients(AttackKind k) {
  switch (k) {
    case AttackKind::salt_pepper:
    case AttackKind::pointwise:
    case AttackKind::mimicry:
    case AttackKind::random_add:
      return false;
    default:
      return true;
  }
}

struct AttackSpec {
  AttackKind kind = AttackKind::pgd_linf;
  Index iterations = 100;
  double step = 0.02;
  Index restarts = 5;  // iMaxMA rounds
  ThreatLevel level = ThreatLevel::grey;
  std::uint64_t seed = 0;
  bool randomized_rounding = false;
  // Oblivious attacks stop at the first evasion; adaptive ones run all
  // iterations and keep the iterate with the highest loss.
  std::optional<bool> early_stop;

  // Ensemble members.
  Index l1_iterations = 100;
  Index l2_iterations = 100;
  double l2_step = 0.5;
  Index linf_iterations = 100;
  double linf_step = 0.02;

  // Gradient-free attacks.
  double intensity_step = 0.001;
  Index repeats = 10;
  Index query_budget = 10;
  double max_add_rate = 1.0;
  Index n_guides = 1;

  bool stops_early() const { return early_stop.value_or(level != ThreatLevel::white); }

  static AttackSpec defaults(AttackKind kind, ThreatLevel level = ThreatLevel::grey) {
    AttackSpec s;
    s.kind = kind;
    s.level = level;
    const bool adaptive = level == ThreatLevel::white;
    s.l1_iterations = adaptive ? 500 : 100;
    s.l2_iterations = adaptive ? 200 : 100;
    s.l2_step = adaptive ? 0.05 : 0.5;
    s.linf_iterations = adaptive ? 500 : 100;
    s.linf_step = adaptive ? 0.002 : 0.02;
    switch (kind) {
      case AttackKind::pgd_l1:
      case AttackKind::bca:
      case AttackKind::grosse:
        s.iterations = s.l1_iterations;
        s.step = 1.0;
        break;
      case AttackKind::pgd_l2:
        s.iterations = s.l2_iterations;
        s.step = s.l2_step;
        break;
      case AttackKind::pgd_linf:
        s.iterations = s.linf_iterations;
        s.step = s.linf_step;
        break;
      case AttackKind::rfgsm:
        s.iterations = 100;
        s.step = 0.02;
        break;
      case AttackKind::stepwise_ma:
        s.iterations = 100;
        break;
      default:
        break;
    }
    return s;
  }

  void validate() const {
    if (iterations < 0) throw ConfigError("attack: iterations must be >= 0");
    if (step < 0 || l2_step < 0 || linf_step < 0) throw ConfigError("attack: step sizes must be >= 0");
    if (restarts < 1) throw ConfigError("attack: restarts must be >= 1");
    if (!(intensity_step > 0 && intensity_step <= 1)) throw ConfigError("attack: intensity step in (0,1]");
    if (repeats < 1 || query_budget < 0 || n_guides < 0) throw ConfigError("attack: bad query settings");
  }
};

// Attacks are only valid at the threat level of the scenario they run in;
// gradient attacks cannot run black-box.
inline void check_capability(const AttackSpec& spec, ThreatLevel scenario) {
  if (spec.level != scenario)
    throw CapabilityError(std::string(to_string(spec.kind)) + " is configured as " +
                          std::string(to_string(spec.level)) + "-box but the scenario is " +
                          std::string(to_string(scenario)) + "-box");
  if (scenario == ThreatLevel::black && needs_gradients(spec.kind))
    throw CapabilityError(std::string(to_string(spec.kind)) + " needs gradients; not available black-box");
}

// ---------------------------------------------------------------------------

class AttackSurface {
 public:
  struct Gradient {
    Vector value;  // differentiable objective at the (possibly continuous) input
    Matrix grad;
  };

  static AttackSurface black(const Pipeline& deployed) { return {ThreatLevel::black, deployed}; }
  static AttackSurface grey(const DetectorModel& detector) {
    return {ThreatLevel::grey, Pipeline{&detector, nullptr}};
  }
  static AttackSurface white(const Pipeline& deployed) { return {ThreatLevel::white, deployed}; }

  static AttackSurface for_level(ThreatLevel level, const Pipeline& deployed) {
    switch (level) {
      case ThreatLevel::black: return black(deployed);
      case ThreatLevel::grey: return grey(*deployed.detector);
      case ThreatLevel::white: return white(deployed);
    }
    throw ConfigError("bad threat level");
  }

  ThreatLevel level() const { return level_; }
  bool sees_purifier() const { return target_.purifier != nullptr; }
  double threshold() const { return target_.detector->threshold(); }
  Index dim() const { return target_.detector->input_dim(); }

  // Malicious score of binary inputs as seen by the attacked system.
  Vector scores(const Matrix& x) const { return target_.scores(x); }

  // L(x') = BCE(score(x'), 1), the quantity the attacker maximises.
  Vector losses(const Matrix& x) const {
    const Vector s = scores(x);
    return s.unaryExpr([](double v) { return binary_cross_entropy(v, 1.0); });
  }

  bool evades(double score) const { return score < threshold(); }

  // Loss and its input gradient on continuous inputs. White-box inputs pass
  // through the continuous decoder output (rounding is treated as identity).
  Gradient loss_gradient(const Matrix& v) const { return differentiate(v, true); }

  // Gradient of the malicious score itself.
  Gradient score_gradient(const Matrix& v) const { return differentiate(v, false); }

 private:
  AttackSurface(ThreatLevel level, Pipeline target) : level_(level), target_(target) {}

  Gradient differentiate(const Matrix& v, bool loss) const {
    if (level_ == ThreatLevel::black) throw CapabilityError("black-box attacks have no gradient access");
    Tape ptape;
    const Matrix z = target_.purifier ? target_.purifier->reconstruct(v, ptape) : v;
    auto [s, gs] = target_.detector->score_and_gradient(z);
    Gradient out;
    out.value = s;
    if (loss) {
      for (Index i = 0; i < s.size(); ++i) {
        out.value(i) = binary_cross_entropy(s(i), 1.0);
        gs.row(i) *= binary_cross_entropy_slope(s(i), 1.0);
      }
    }
    out.grad = target_.purifier ? target_.purifier->input_gradient(ptape, gs) : std::move(gs);
    return out;
  }

  ThreatLevel level_;
  Pipeline target_;
};

struct AttackLoss {
  double loss = 0;       // BCE of the deployed (rounded) path
  double surrogate = 0;  // BCE of the differentiable path
  Vector gradient;       // d surrogate / d x'
};

inline AttackLoss attack_loss(const AttackSurface& surface, const Vector& x_adv) {
  const Matrix row = x_adv.transpose();
  AttackLoss out;
  auto g = surface.loss_gradient(row);
  out.surrogate = g.value(0);
  out.gradient = g.grad.row(0).transpose();
  out.loss = is_binary(row) ? surface.losses(row)(0) : out.surrogate;
  return out;
}

// ---------------------------------------------------------------------------

struct AttackResult {
  Vector original;
  Vector adversarial;
  bool success = false;
  Index queries = 0;
  Index iterations = 0;
  Index flips = 0;
  double loss = 0;
};

inline bool validate_adversarial(const Vector& x, const Vector& x_adv, const ManipulationBounds& bounds) {
  if (x.size() != x_adv.size() || bounds.rows() != 1 || bounds.lower.cols() != x.size()) return false;
  return is_binary(x_adv) && bounds.contains(Matrix(x_adv.transpose()));
}

inline Index count_flips(const Vector& a, const Vector& b) {
  return static_cast<Index>((a.array() != b.array()).count());
}

namespace detail {

inline Rng row_rng(const AttackSpec& spec, std::string_view tag, Index row, Index round = 0) {
  return Rng(spec.seed).fork(tag).fork(static_cast<std::uint64_t>(row)).fork(static_cast<std::uint64_t>(round));
}

inline Matrix random_start(const ManipulationBounds& b, const AttackSpec& spec, Index round) {
  Matrix v(b.lower.rows(), b.lower.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    Rng rng = row_rng(spec, "random-start", r, round);
    for (Index c = 0; c < v.cols(); ++c) v(r, c) = rng.uniform(b.lower(r, c), b.upper(r, c));
  }
  return v;
}

inline std::vector<AttackResult> finish(const Matrix& x, const Matrix& adv, const AttackSurface& surface,
                                        std::vector<Index> queries, std::vector<Index> iterations) {
  const Vector s = surface.scores(adv);
  std::vector<AttackResult> out(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r) {
    AttackResult& res = out[static_cast<std::size_t>(r)];
    res.original = x.row(r).transpose();
    res.adversarial = adv.row(r).transpose();
    res.success = surface.evades(s(r));
    res.loss = binary_cross_entropy(s(r), 1.0);
    res.flips = count_flips(res.original, res.adversarial);
    res.queries = queries[static_cast<std::size_t>(r)] + 1;
    res.iterations = iterations[static_cast<std::size_t>(r)];
  }
  return out;
}

inline void check_batch(const Matrix& x, const ManipulationBounds& b, const AttackSurface& surface) {
  if (x.cols() != surface.dim()) throw ShapeError("attack: input width does not match the model");
  if (b.lower.rows() != x.rows() || b.lower.cols() != x.cols() || b.upper.rows() != x.rows() ||
      b.upper.cols() != x.cols())
    throw ShapeError("attack: bounds shape does not match the batch");
  if (!is_binary(x)) throw FormatError("attack: input is not binary");
  if (!b.contains(x)) throw ConfigError("attack: sample lies outside its manipulation bounds");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Iterative gradient attacks

enum class StepRule { l1, l2, linf, bca, grosse };

struct StepSpec {
  StepRule rule = StepRule::linf;
  double size = 0.02;
};

namespace detail {

// Moves one row of the iterate. `g` is the loss gradient (score gradient for
// Grosse). `locked` marks coordinates a one-bit rule has already flipped.
inline void apply_step(const StepSpec& s, Eigen::Ref<RowVector> v, const RowVector& g,
                       const RowVector& lower, const RowVector& upper, Eigen::Ref<RowVector> locked) {
  switch (s.rule) {
    case StepRule::linf:
      v += s.size * g.unaryExpr([](double x) { return double((x > 0) - (x < 0)); });
      break;
    case StepRule::l2: {
      const double norm = g.norm();
      if (norm > 0) v += (s.size / norm) * g;
      break;
    }
    case StepRule::l1:
    case StepRule::bca:
    case StepRule::grosse: {
      // Grosse climbs the benign score, i.e. descends the malicious score.
      const double sign = s.rule == StepRule::grosse ? -1.0 : 1.0;
      Index best = -1;
      double best_gain = 0;
      for (Index c = 0; c < v.size(); ++c) {
        if (locked(c) != 0) continue;
        const double gc = sign * g(c);
        double gain = 0;
        if (gc > 0 && v(c) < upper(c)) gain = gc;
        else if (s.rule == StepRule::l1 && gc < 0 && v(c) > lower(c)) gain = -gc;
        if (gain > best_gain) {
          best_gain = gain;
          best = c;
        }
      }
      if (best >= 0) {
        v(best) = sign * g(best) > 0 ? upper(best) : lower(best);
        locked(best) = 1;
      }
      break;
    }
  }
  v = v.cwiseMax(lower).cwiseMin(upper);
}

inline Matrix gather(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
  return out;
}

}  // namespace detail

// Shared engine for the PGD family, BCA, Grosse and StepwiseMA. Each round
// applies every rule in `steps` once, each with a fresh gradient.
inline std::vector<AttackResult> iterative_attack(const Matrix& x, const ManipulationBounds& bounds,
                                                  const AttackSurface& surface,
                                                  const std::vector<StepSpec>& steps, Index iterations,
                                                  bool early_stop, const Matrix* start = nullptr,
                                                  Rng* rounding_rng = nullptr) {
  detail::check_batch(x, bounds, surface);
  const Index n = x.rows();
  Matrix v = bounds.project(start ? *start : x);
  Matrix locked = Matrix::Zero(n, x.cols());
  std::vector<Index> queries(static_cast<std::size_t>(n), 0), iters(static_cast<std::size_t>(n), 0);
  std::vector<bool> done(static_cast<std::size_t>(n), false);

  auto round = [&](const Matrix& m) {
    return bounds.project(rounding_rng ? randomized_round(m, *rounding_rng) : binarize(m));
  };
  // Adaptive mode keeps the best rounded iterate.
  Matrix best;
  Vector best_loss;
  if (!early_stop) {
    best = bounds.project(binarize(v));
    best_loss = surface.losses(best);
    for (auto& q : queries) ++q;
  }

  for (Index t = 0; t < iterations; ++t) {
    std::vector<Index> active;
    for (Index r = 0; r < n; ++r)
      if (!done[static_cast<std::size_t>(r)]) active.push_back(r);
    if (early_stop && !active.empty()) {
      const Vector s = surface.scores(bounds.rows_at(active).project(binarize(detail::gather(v, active))));
      std::vector<Index> still;
      for (std::size_t k = 0; k < active.size(); ++k) {
        ++queries[static_cast<std::size_t>(active[k])];
        if (surface.evades(s(static_cast<Index>(k))))
          done[static_cast<std::size_t>(active[k])] = true;
        else
          still.push_back(active[k]);
      }
      active = std::move(still);
    }
    if (active.empty()) break;
    const ManipulationBounds ab = bounds.rows_at(active);
    Matrix va = detail::gather(v, active);
    Matrix la = detail::gather(locked, active);
    for (const StepSpec& s : steps) {
      const auto g = s.rule == StepRule::grosse ? surface.score_gradient(va) : surface.loss_gradient(va);
      for (Index k = 0; k < va.rows(); ++k)
        detail::apply_step(s, va.row(k), g.grad.row(k), ab.lower.row(k), ab.upper.row(k), la.row(k));
    }
    for (std::size_t k = 0; k < active.size(); ++k) {
      const auto r = active[k];
      v.row(r) = va.row(static_cast<Index>(k));
      locked.row(r) = la.row(static_cast<Index>(k));
      queries[static_cast<std::size_t>(r)] += static_cast<Index>(steps.size());
      ++iters[static_cast<std::size_t>(r)];
    }
    if (!early_stop) {
      const Matrix rounded = ab.project(binarize(va));
      const Vector l = surface.losses(rounded);
      for (std::size_t k = 0; k < active.size(); ++k) {
        const auto r = active[k];
        ++queries[static_cast<std::size_t>(r)];
        if (l(static_cast<Index>(k)) > best_loss(r)) {
          best_loss(r) = l(static_cast<Index>(k));
          best.row(r) = rounded.row(static_cast<Index>(k));
        }
      }
    }
  }
  const Matrix adv = early_stop ? round(v) : best;
  return detail::finish(x, adv, surface, std::move(queries), std::move(iters));
}

inline StepRule step_rule_for(AttackKind kind) {
  switch (kind) {
    case AttackKind::pgd_l1: return StepRule::l1;
    case AttackKind::pgd_l2: return StepRule::l2;
    case AttackKind::pgd_linf:
    case AttackKind::rfgsm: return StepRule::linf;
    case AttackKind::bca: return StepRule::bca;
    case AttackKind::grosse: return StepRule::grosse;
    default: throw ConfigError(std::string(to_string(kind)) + " is not a single-rule gradient attack");
  }
}

// PGD-l1/l2/linf and rFGSM. rFGSM starts from a uniform point of the box and
// may round randomly at the end.
inline std::vector<AttackResult> pgd(const Matrix& x, const ManipulationBounds& bounds,
                                     const AttackSpec& spec, const AttackSurface& surface,
                                     const Matrix* start = nullptr) {
  spec.validate();
  const StepRule rule = step_rule_for(spec.kind);
  std::optional<Matrix> random_init;
  if (!start && spec.kind == AttackKind::rfgsm) {
    detail::check_batch(x, bounds, surface);
    random_init = detail::random_start(bounds, spec, 0);
    start = &*random_init;
  }
  std::optional<Rng> rounding;
  if (spec.randomized_rounding) rounding = Rng(spec.seed).fork("randomized-rounding");
  return iterative_attack(x, bounds, surface, {{rule, spec.step}}, spec.iterations, spec.stops_early(), start,
                          rounding ? &*rounding : nullptr);
}

// Bit coordinate ascent: one 0->1 flip per iteration on the largest positive
// loss gradient.
inline std::vector<AttackResult> bca(const Matrix& x, const ManipulationBounds& bounds, const AttackSpec& spec,
                                     const AttackSurface& surface) {
  spec.validate();
  return iterative_attack(x, bounds, surface, {{StepRule::bca, 1.0}}, spec.iterations, spec.stops_early());
}

// Saliency-style variant: one 0->1 flip per iteration on the largest increase
// of the benign score.
inline std::vector<AttackResult> grosse(const Matrix& x, const ManipulationBounds& bounds,
                                        const AttackSpec& spec, const AttackSurface& surface) {
  spec.validate();
  return iterative_attack(x, bounds, surface, {{StepRule::grosse, 1.0}}, spec.iterations, spec.stops_early());
}

// ---------------------------------------------------------------------------
// Ensembles

inline std::vector<AttackSpec> ensemble_members(const AttackSpec& spec) {
  std::vector<AttackSpec> members;
  for (AttackKind k : {AttackKind::pgd_l1, AttackKind::pgd_l2, AttackKind::pgd_linf}) {
    AttackSpec m = spec;
    m.kind = k;
    m.randomized_rounding = false;
    m.iterations = k == AttackKind::pgd_l1 ? spec.l1_iterations
                   : k == AttackKind::pgd_l2 ? spec.l2_iterations
                                             : spec.linf_iterations;
    m.step = k == AttackKind::pgd_l1 ? 1.0 : k == AttackKind::pgd_l2 ? spec.l2_step : spec.linf_step;
    m.seed = Rng(spec.seed).fork(to_string(k)).seed();
    members.push_back(m);
  }
  return members;
}

// Per row, keeps the candidate with the larger loss (first wins ties).
inline void keep_best(std::vector<AttackResult>& best, std::vector<AttackResult>&& candidate) {
  for (std::size_t r = 0; r < best.size(); ++r) {
    const Index extra = candidate[r].queries;
    if (candidate[r].loss > best[r].loss) {
      candidate[r].queries += best[r].queries;
      candidate[r].iterations += best[r].iterations;
      best[r] = std::move(candidate[r]);
    } else {
      best[r].queries += extra;
      best[r].iterations += candidate[r].iterations;
    }
  }
}

// Runs each member attack from the same start and keeps, per row, the result
// with the highest loss.
inline std::vector<AttackResult> max_ma(const Matrix& x, const ManipulationBounds& bounds,
                                        const std::vector<AttackSpec>& members, const AttackSurface& surface,
                                        const Matrix* start = nullptr) {
  if (members.empty()) throw ConfigError("max_ma: no member attacks");
  std::vector<AttackResult> best;
  for (const AttackSpec& m : members) {
    auto res = pgd(x, bounds, m, surface, start);
    if (best.empty())
      best = std::move(res);
    else
      keep_best(best, std::move(res));
  }
  return best;
}

inline std::vector<AttackResult> max_ma(const Matrix& x, const ManipulationBounds& bounds,
                                        const AttackSpec& spec, const AttackSurface& surface) {
  spec.validate();
  return max_ma(x, bounds, ensemble_members(spec), surface);
}

// MaxMA from the clean sample, then `restarts - 1` more rounds from random
// points of the box; the best round wins.
inline std::vector<AttackResult> imax_ma(const Matrix& x, const ManipulationBounds& bounds,
                                         const AttackSpec& spec, const AttackSurface& surface) {
  spec.validate();
  const auto members = ensemble_members(spec);
  auto best = max_ma(x, bounds, members, surface);
  for (Index round = 1; round < spec.restarts; ++round) {
    const Matrix start = detail::random_start(bounds, spec, round);
    keep_best(best, max_ma(x, bounds, members, surface, &start));
  }
  return best;
}

// One l1, one l2 and one linf step per round on a shared iterate.
inline std::vector<AttackResult> stepwise_ma(const Matrix& x, const ManipulationBounds& bounds,
                                             const AttackSpec& spec, const AttackSurface& surface) {
  spec.validate();
  return iterative_attack(x, bounds, surface,
                          {{StepRule::l1, 1.0}, {StepRule::l2, spec.l2_step}, {StepRule::linf, spec.linf_step}},
                          spec.iterations, spec.stops_early());
}

// ---------------------------------------------------------------------------
// Gradient-free attacks

// Resamples each coordinate to a random bit with probability `intensity`,
// then projects into the box.
inline Vector salt_pepper_noise(const Vector& x, const ManipulationBounds& bounds, double intensity, Rng& rng) {
  Vector out = x;
  for (Index c = 0; c < x.size(); ++c) {
    const double u = rng.uniform();
    const double bit = rng.bernoulli(0.5) ? 1.0 : 0.0;
    if (u < intensity) out(c) = bit;
  }
  return bounds.project(Matrix(out.transpose())).row(0).transpose();
}

inline constexpr Index kQueryChunk = 64;

// Intensity sweep in steps of `intensity_step` until the target is evaded,
// repeated `repeats` times; the successful candidate with the fewest flips
// wins. Within one repeat the noise is drawn once and revealed progressively,
// so only intensities that change the candidate are queried.
inline std::vector<AttackResult> salt_pepper(const Matrix& x, const ManipulationBounds& bounds,
                                             const AttackSpec& spec, const AttackSurface& surface) {
  spec.validate();
  detail::check_batch(x, bounds, surface);
  const auto grid = static_cast<Index>(std::llround(1.0 / spec.intensity_step));
  std::vector<AttackResult> out(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r) {
    const RowVector xr = x.row(r);
    AttackResult& res = out[static_cast<std::size_t>(r)];
    res.original = xr.transpose();
    res.adversarial = xr.transpose();
    std::optional<Index> best_flips;
    for (Index rep = 0; rep < spec.repeats; ++rep) {
      Rng rng = detail::row_rng(spec, "salt-pepper", r, rep);
      // (grid step at which the coordinate is revealed, column, value)
      std::vector<std::tuple<Index, Index, double>> reveal;
      for (Index c = 0; c < x.cols(); ++c) {
        const double u = rng.uniform();
        const double bit = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double projected = std::clamp(bit, bounds.lower(r, c), bounds.upper(r, c));
        const auto at = static_cast<Index>(std::floor(u / spec.intensity_step)) + 1;
        if (projected != xr(c) && at <= grid) reveal.emplace_back(at, c, projected);
      }
      std::sort(reveal.begin(), reveal.end());
      // Candidates are scored in chunks; the first evading one in sequence
      // order wins and only the queries up to it are counted.
      RowVector cand = xr;
      Index flips = 0;
      std::vector<Index> chunk_flips;
      Matrix chunk(kQueryChunk, x.cols());
      bool found = false;
      for (std::size_t k = 0; k < reveal.size() && !found;) {
        Index filled = 0;
        chunk_flips.clear();
        for (; filled < kQueryChunk && k < reveal.size(); ++filled) {
          const Index at = std::get<0>(reveal[k]);
          for (; k < reveal.size() && std::get<0>(reveal[k]) == at; ++k) {
            cand(std::get<1>(reveal[k])) = std::get<2>(reveal[k]);
            ++flips;
          }
          chunk.row(filled) = cand;
          chunk_flips.push_back(flips);
        }
        const Vector sc = surface.scores(chunk.topRows(filled));
        for (Index q = 0; q < filled; ++q) {
          ++res.queries;
          ++res.iterations;
          if (surface.evades(sc(q))) {
            const Index f = chunk_flips[static_cast<std::size_t>(q)];
            if (!best_flips || f < *best_flips) {
              best_flips = f;
              res.adversarial = chunk.row(q).transpose();
            }
            found = true;
            break;
          }
        }
      }
    }
  }
  return detail::finish(x, [&] {
    Matrix adv(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) adv.row(r) = out[static_cast<std::size_t>(r)].adversarial.transpose();
    return adv;
  }(), surface, [&] {
    std::vector<Index> q;
    for (const auto& o : out) q.push_back(o.queries);
    return q;
  }(), [&] {
    std::vector<Index> it;
    for (const auto& o : out) it.push_back(o.iterations);
    return it;
  }());
}

// Greedy minimisation of an evading candidate: perturbed coordinates are
// reverted one at a time, cheapest first (smallest score increase), and a
// revert is kept only while the target stays evaded. Passes repeat until none
// succeeds.
inline AttackResult minimise_perturbation(const Vector& x, AttackResult seed, const AttackSurface& surface) {
  if (!seed.success) return seed;
  RowVector cur = seed.adversarial.transpose();
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<Index> perturbed;
    for (Index c = 0; c < cur.size(); ++c)
      if (cur(c) != x(c)) perturbed.push_back(c);
    Matrix trials = cur.replicate(static_cast<Index>(perturbed.size()), 1);
    for (std::size_t k = 0; k < perturbed.size(); ++k)
      trials(static_cast<Index>(k), perturbed[k]) = x(perturbed[k]);
    const Vector trial_scores = perturbed.empty() ? Vector() : surface.scores(trials);
    std::vector<std::pair<double, Index>> order;
    for (std::size_t k = 0; k < perturbed.size(); ++k) order.emplace_back(trial_scores(static_cast<Index>(k)), perturbed[k]);
    seed.queries += static_cast<Index>(perturbed.size());
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [unused, c] : order) {
      RowVector trial = cur;
      trial(c) = x(c);
      ++seed.queries;
      if (surface.evades(surface.scores(Matrix(trial))(0))) {
        cur = std::move(trial);
        changed = true;
      }
    }
    ++seed.iterations;
  }
  seed.adversarial = cur.transpose();
  const double s = surface.scores(Matrix(cur))(0);
  seed.loss = binary_cross_entropy(s, 1.0);
  seed.success = surface.evades(s);
  seed.flips = count_flips(x, seed.adversarial);
  return seed;
}

inline std::vector<AttackResult> pointwise(const Matrix& x, const ManipulationBounds& bounds,
                                           const AttackSpec& spec, const AttackSurface& surface) {
  auto seeds = salt_pepper(x, bounds, spec, surface);
  for (Index r = 0; r < x.rows(); ++r)
    seeds[static_cast<std::size_t>(r)] =
        minimise_perturbation(x.row(r).transpose(), std::move(seeds[static_cast<std::size_t>(r)]), surface);
  return seeds;
}

// Query q of Q adds each allowed 0->1 feature with probability
// max_add_rate * q / Q and stops on the first evasion.
inline std::vector<AttackResult> random_add(const Matrix& x, const ManipulationBounds& bounds,
                                            const AttackSpec& spec, const AttackSurface& surface) {
  spec.validate();
  detail::check_batch(x, bounds, surface);
  Matrix adv = x;
  std::vector<Index> queries(static_cast<std::size_t>(x.rows()), 0), iters(static_cast<std::size_t>(x.rows()), 0);
  for (Index r = 0; r < x.rows(); ++r) {
    Rng rng = detail::row_rng(spec, "random-add", r);
    for (Index q = 1; q <= spec.query_budget; ++q) {
      const double rate = spec.max_add_rate * static_cast<double>(q) / static_cast<double>(spec.query_budget);
      RowVector cand = x.row(r);
      for (Index c = 0; c < x.cols(); ++c)
        if (cand(c) == 0.0 && bounds.upper(r, c) == 1.0 && rng.uniform() < rate) cand(c) = 1.0;
      ++queries[static_cast<std::size_t>(r)];
      iters[static_cast<std::size_t>(r)] = q;
      if (surface.evades(surface.scores(Matrix(cand))(0))) {
        adv.row(r) = cand;
        break;
      }
    }
  }
  return detail::finish(x, adv, surface, std::move(queries), std::move(iters));
}

// Copies the union of the n nearest (Hamming) benign samples into x, clipped
// to the box.
inline std::vector<AttackResult> mimicry(const Matrix& x, const Matrix& benign_pool, Index n_guides,
                                         const ManipulationBounds& bounds, const AttackSurface& surface) {
  if (benign_pool.rows() == 0) throw ConfigError("mimicry: empty benign pool");
  if (n_guides < 0) throw ConfigError("mimicry: n_guides must be >= 0");
  detail::check_batch(x, bounds, surface);
  if (benign_pool.cols() != x.cols()) throw ShapeError("mimicry: benign pool width mismatch");
  Matrix adv = x;
  const Index k = std::min(n_guides, benign_pool.rows());
  if (k > 0) {
    for (Index r = 0; r < x.rows(); ++r) {
      std::vector<std::pair<Index, Index>> dist;
      for (Index b = 0; b < benign_pool.rows(); ++b)
        dist.emplace_back(static_cast<Index>((benign_pool.row(b).array() != x.row(r).array()).count()), b);
      std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
      RowVector guide = RowVector::Zero(x.cols());
      for (Index g = 0; g < k; ++g) guide = guide.cwiseMax(benign_pool.row(dist[static_cast<std::size_t>(g)].second));
      adv.row(r) = guide.cwiseMax(bounds.lower.row(r)).cwiseMin(bounds.upper.row(r));
    }
  }
  return detail::finish(x, adv, surface, std::vector<Index>(static_cast<std::size_t>(x.rows()), 0),
                        std::vector<Index>(static_cast<std::size_t>(x.rows()), k > 0 ? 1 : 0));
}

// ---------------------------------------------------------------------------

struct AttackContext {
  const Matrix* benign_pool = nullptr;  // mimicry guides
};

inline std::vector<AttackResult> run_attack(const Matrix& x, const ManipulationBounds& bounds,
                                            const AttackSpec& spec, const AttackSurface& surface,
                                            const AttackContext& ctx = {}) {
  check_capability(spec, surface.level());
  spec.validate();
  switch (spec.kind) {
    case AttackKind::pgd_l1:
    case AttackKind::pgd_l2:
    case AttackKind::pgd_linf:
    case AttackKind::rfgsm: return pgd(x, bounds, spec, surface);
    case AttackKind::bca: return bca(x, bounds, spec, surface);
    case AttackKind::grosse: return grosse(x, bounds, spec, surface);
    case AttackKind::salt_pepper: return salt_pepper(x, bounds, spec, surface);
    case AttackKind::pointwise: return pointwise(x, bounds, spec, surface);
    case AttackKind::max_ma: return max_ma(x, bounds, spec, surface);
    case AttackKind::imax_ma: return imax_ma(x, bounds, spec, surface);
    case AttackKind::stepwise_ma: return stepwise_ma(x, bounds, spec, surface);
    case AttackKind::random_add: return random_add(x, bounds, spec, surface);
    case AttackKind::mimicry:
      if (!ctx.benign_pool) throw ConfigError("mimicry: no benign pool supplied");
      return mimicry(x, *ctx.benign_pool, spec.n_guides, bounds, surface);
  }
  throw ConfigError("unhandled attack kind");
}

}  // namespace malpurify
