#pragma once

// AT-rFGSM^k baseline: every malware row of a training batch is replaced by a
// k-step rFGSM example against the current parameters before the update.

#include "malpurify/detector.hpp"
#include "malpurify/features.hpp"

namespace malpurify {

struct AdversarialTrainingConfig {
  Index iterations = 50;
  double step = 0.02;
  BoundsPolicy bounds = BoundsPolicy::add_only;
};

// Random start in the box, k signed-gradient ascent steps on BCE(f(x'), 1),
// then randomized rounding.
inline Matrix rfgsm_k(const Network& net, const Matrix& x, const ManipulationBounds& bounds,
                      const AdversarialTrainingConfig& cfg, Rng& rng) {
  Matrix v(x.rows(), x.cols());
  for (Index r = 0; r < v.rows(); ++r)
    for (Index c = 0; c < v.cols(); ++c) v(r, c) = rng.uniform(bounds.lower(r, c), bounds.upper(r, c));
  for (Index t = 0; t < cfg.iterations; ++t) {
    Tape tape;
    const Matrix p = net.forward(v, &tape);
    Matrix up(v.rows(), 1);
    for (Index r = 0; r < v.rows(); ++r) up(r, 0) = binary_cross_entropy_slope(p(r, 0), 1.0);
    const Matrix g = net.backward(tape, up, false).input;
    v += cfg.step * g.unaryExpr([](double d) { return double((d > 0) - (d < 0)); });
    v = bounds.project(v);
  }
  return bounds.project(randomized_round(v, rng));
}

inline DetectorModel train_detector_adversarial(const LabeledDataset& train, const LabeledDataset& val,
                                                const DetectorTrainConfig& cfg,
                                                const AdversarialTrainingConfig& at, std::uint64_t seed,
                                                const DetectorArchitecture& arch = {}) {
  if (at.iterations < 0 || at.step < 0) throw ConfigError("adversarial training: bad attack settings");
  // Zero strength is plain training.
  if (at.iterations == 0 || at.step == 0.0) return fit_detector(train, val, arch, cfg, seed);
  BatchHook hook = [&at](const Network& net, Matrix& batch, const Vector& labels, Rng& rng) {
    std::vector<Index> mal;
    for (Index k = 0; k < labels.size(); ++k)
      if (labels(k) == 1.0) mal.push_back(k);
    if (mal.empty()) return;
    Matrix x(static_cast<Index>(mal.size()), batch.cols());
    for (std::size_t k = 0; k < mal.size(); ++k) x.row(static_cast<Index>(k)) = batch.row(mal[k]);
    const Matrix adv = rfgsm_k(net, x, default_bounds(x, at.bounds), at, rng);
    for (std::size_t k = 0; k < mal.size(); ++k) batch.row(mal[k]) = adv.row(static_cast<Index>(k));
  };
  return fit_detector(train, val, arch, cfg, seed, hook);
}

}  // namespace malpurify
