#pragma once

// Denoising-autoencoder purifier: training-set construction (diversified
// adversarial perturbation for malware, protective noise for benign apps),
// the weighted reconstruction + feature-space loss, training, and inference.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "malpurify/checkpoint.hpp"
#include "malpurify/detector.hpp"
#include "malpurify/errors.hpp"
#include "malpurify/features.hpp"
#include "malpurify/numeric.hpp"
#include "malpurify/rng.hpp"

namespace malpurify {

struct PurifierArchitecture {
  Index input_dim = 500;
  std::vector<Index> encoder = {600, 600};
  std::vector<Index> decoder = {600};  // hidden decoder widths; the output layer is added
  bool attention = true;
};

class PurifierModel {
 public:
  PurifierModel(Network net, std::uint64_t seed, bool attention)
      : net_(std::move(net)), seed_(seed), attention_(attention) {
    if (net_.depth() < 1 || net_.input_dim() != net_.output_dim())
      throw ShapeError("purifier: network must map R^d to R^d");
    if (net_.layers().back().activation != Activation::sigmoid)
      throw ShapeError("purifier: output layer must be sigmoid");
    dim_ = net_.input_dim();
  }

  static PurifierModel initialize(const PurifierArchitecture& arch, std::uint64_t seed) {
    if (arch.encoder.empty()) throw ConfigError("purifier: encoder needs at least one layer");
    Rng rng = Rng(seed).fork("purifier-init");
    std::vector<LayerSpec> enc;
    Index in = arch.input_dim;
    for (Index w : arch.encoder) {
      enc.push_back({in, w, Activation::sigmoid});
      in = w;
    }
    std::vector<LayerSpec> dec;
    for (Index w : arch.decoder) {
      dec.push_back({in, w, Activation::sigmoid});
      in = w;
    }
    dec.push_back({in, arch.input_dim, Activation::sigmoid});
    std::vector<Layer> layers = Network::dense(enc, rng).layers();
    if (arch.attention) layers.push_back(Network::gate(arch.encoder.back()));
    const Network decoder = Network::dense(dec, rng);
    layers.insert(layers.end(), decoder.layers().begin(), decoder.layers().end());
    return PurifierModel(Network(std::move(layers)), seed, arch.attention);
  }

  // Pass-through purifier: purify(x) == x. Only meant for tests and ablations.
  static PurifierModel identity(Index dim) {
    Layer l;
    l.kind = LayerKind::dense;
    l.activation = Activation::sigmoid;
    l.weight = Matrix::Zero(dim, dim);
    l.bias = Vector::Zero(dim);
    PurifierModel m(Network({l}), 0, false);
    m.pass_through_ = true;
    return m;
  }

  const Network& network() const { return net_; }
  Index dim() const { return dim_; }
  bool pass_through() const { return pass_through_; }
  bool attention() const { return attention_; }
  std::uint64_t seed() const { return seed_; }

  void check_dim(Index cols) const {
    if (cols != dim_)
      throw ShapeError("purifier: expected dim " + std::to_string(dim_) + ", got " + std::to_string(cols));
  }

  // Continuous decoder output in [0,1]^d.
  Matrix reconstruct(const Matrix& x) const {
    check_dim(x.cols());
    return pass_through_ ? x : net_.forward(x);
  }

  Matrix reconstruct(const Matrix& x, Tape& tape) const {
    check_dim(x.cols());
    if (pass_through_) {
      tape = Tape{};
      return x;
    }
    return net_.forward(x, &tape);
  }

  // Vector-Jacobian product of the continuous reconstruction.
  Matrix input_gradient(const Tape& tape, const Matrix& upstream) const {
    return pass_through_ ? upstream : net_.backward(tape, upstream, false).input;
  }

  Matrix purify(const Matrix& x) const {
    check_dim(x.cols());
    if (!is_binary(x)) throw FormatError("purify: input is not binary");
    return binarize(reconstruct(x));
  }

  Vector purify(const Vector& x) const { return purify(Matrix(x.transpose())).row(0).transpose(); }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.type = "purifier";
    ck.meta["seed"] = std::to_string(seed_);
    ck.meta["attention"] = attention_ ? "1" : "0";
    ck.meta["pass_through"] = pass_through_ ? "1" : "0";
    ck.network = net_;
    return ck;
  }

  static PurifierModel from_checkpoint(const Checkpoint& ck) {
    if (ck.type != "purifier") throw FormatError("checkpoint is not a purifier");
    PurifierModel m(ck.network, std::stoull(ck.at("seed")), ck.at("attention") == "1");
    m.pass_through_ = ck.at("pass_through") == "1";
    return m;
  }

 private:
  Network net_;
  std::uint64_t seed_ = 0;
  bool attention_ = true;
  bool pass_through_ = false;
  Index dim_ = 0;
};

// ---------------------------------------------------------------------------
// Defended system: optional purifier in front of a detector.

struct Pipeline {
  const DetectorModel* detector = nullptr;
  const PurifierModel* purifier = nullptr;

  bool defended() const { return purifier != nullptr; }

  Matrix preprocess(const Matrix& x) const { return purifier ? purifier->purify(x) : x; }
  Vector scores(const Matrix& x) const { return detector->scores(preprocess(x)); }
  std::vector<Label> labels(const Matrix& x) const { return detector->labels(preprocess(x)); }
  Prediction predict(const Vector& x) const {
    return detector->predict(purifier ? purifier->purify(x) : x);
  }
};

inline Prediction pipeline_predict(const PurifierModel& purifier, const DetectorModel& detector,
                                   const Vector& x) {
  return detector.predict(purifier.purify(x));
}

// ---------------------------------------------------------------------------
// Paired training samples (input x', target x).

struct PairSet {
  Matrix originals;
  Matrix inputs;

  Index size() const { return originals.rows(); }
};

struct DiversificationConfig {
  Index batches = 10;
  Index iterations = 50;
  double step = 0.01;
  std::uint64_t seed = 11;
  Index feature_layer = 0;  // 0: the detector's configured feature layer

  double depth(Index batch) const { return step * static_cast<double>(batch - 1); }
};

struct DiversifiedSet {
  PairSet pairs;
  std::vector<Index> batch_of;  // 1-based batch index of each row
  std::vector<double> depths;   // depth of batch i at depths[i-1]
};

// Gradient ascent on the detector feature-space distance from a depth-scaled
// random start. Batch 1 has depth 0 and is passed through unchanged; batch i
// uses depth s*(i-1). The step is the gradient divided by its max-norm, the
// iterate is clipped to [0,1], and its rounding is the emitted sample.
inline DiversifiedSet diversify_malware(const Matrix& malware, const DetectorModel& detector,
                                        const DiversificationConfig& cfg) {
  if (malware.rows() == 0) throw ConfigError("diversify_malware: empty malware set");
  if (cfg.batches < 1 || cfg.iterations < 0 || cfg.step < 0)
    throw ConfigError("diversify_malware: bad configuration");
  if (!is_binary(malware)) throw FormatError("diversify_malware: input is not binary");
  const Index n = cfg.feature_layer > 0 ? cfg.feature_layer : detector.feature_layer();
  const Index rows = malware.rows();

  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = Rng(cfg.seed).fork("diversify");
  rng.shuffle(std::span<Index>(order));

  DiversifiedSet out;
  out.pairs.originals = malware;
  out.pairs.inputs = malware;
  out.batch_of.assign(static_cast<std::size_t>(rows), 1);
  for (Index i = 1; i <= cfg.batches; ++i) out.depths.push_back(cfg.depth(i));

  const Index nb = std::min(cfg.batches, rows);
  for (Index i = 1; i <= nb; ++i) {
    const Index lo = (i - 1) * rows / nb;
    const Index hi = i * rows / nb;
    std::vector<Index> members(order.begin() + lo, order.begin() + hi);
    for (Index r : members) out.batch_of[static_cast<std::size_t>(r)] = i;
    const double k = cfg.depth(i);
    if (k == 0.0) continue;

    const Index b = hi - lo;
    Matrix x(b, malware.cols());
    for (Index r = 0; r < b; ++r) x.row(r) = malware.row(members[static_cast<std::size_t>(r)]);
    Matrix v(b, x.cols());
    for (Index r = 0; r < b; ++r)
      for (Index c = 0; c < x.cols(); ++c)
        v(r, c) = x(r, c) + k * rng.uniform() * (1.0 - 2.0 * x(r, c));
    for (Index t = 0; t < cfg.iterations; ++t) {
      const Matrix g = feature_distance(detector, x, v, n).grad_b;
      for (Index r = 0; r < b; ++r) {
        const double scale = g.row(r).cwiseAbs().maxCoeff();
        if (scale > 0) v.row(r) += (k / scale) * g.row(r);
      }
      v = v.cwiseMax(0.0).cwiseMin(1.0);
    }
    const Matrix xb = binarize(v);
    for (Index r = 0; r < b; ++r) out.pairs.inputs.row(members[static_cast<std::size_t>(r)]) = xb.row(r);
  }
  return out;
}

struct NoiseConfig {
  double eta = 0.001;
  std::uint64_t seed = 13;
};

// Flips each bit independently with probability eta.
inline PairSet inject_protective_noise(const Matrix& benign, const NoiseConfig& cfg) {
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw ConfigError("protective noise: eta must lie in [0,1]");
  if (!is_binary(benign)) throw FormatError("protective noise: input is not binary");
  Rng rng = Rng(cfg.seed).fork("protective-noise");
  PairSet out;
  out.originals = benign;
  out.inputs = benign;
  for (Index r = 0; r < benign.rows(); ++r)
    for (Index c = 0; c < benign.cols(); ++c)
      if (rng.uniform() < cfg.eta) out.inputs(r, c) = 1.0 - benign(r, c);
  return out;
}

// ---------------------------------------------------------------------------
// Loss

struct PurifierLossWeights {
  double alpha = 0.5;
  double beta = 0.5;

  void validate() const {
    if (alpha < 0 || alpha > 1 || beta < 0 || beta > 1)
      throw ConfigError("purifier loss: alpha and beta must lie in [0,1]");
    if (std::abs(alpha + beta - 1.0) > 1e-9) throw ConfigError("purifier loss: alpha + beta must equal 1");
  }
};

struct PurifierLoss {
  double total = 0;
  double reconstruction = 0;
  double prediction = 0;
};

// Reconstruction MSE(x, ψ(x')) and feature-space MSE(F_n(x), F_n(ψ(x'))),
// both on the continuous decoder output.
inline PurifierLoss purifier_loss(const PurifierModel& purifier, const DetectorModel& detector,
                                  const Matrix& originals, const Matrix& inputs,
                                  const PurifierLossWeights& w, Index feature_layer = 0) {
  w.validate();
  if (originals.rows() != inputs.rows() || originals.rows() == 0)
    throw ShapeError("purifier loss: batches must be non-empty and paired");
  const Index n = feature_layer > 0 ? feature_layer : detector.feature_layer();
  const Matrix out = purifier.reconstruct(inputs);
  PurifierLoss loss;
  loss.reconstruction = mse(out, originals);
  loss.prediction = mse(detector.internal_repr(out, n), detector.internal_repr(originals, n));
  loss.total = w.alpha * loss.reconstruction + w.beta * loss.prediction;
  return loss;
}

// ---------------------------------------------------------------------------
// Training

struct PurifierTrainConfig {
  Index epochs = 40;
  Index batch_size = 128;
  AdamConfig adam{};
  Index samples_per_source = 0;  // 0: size of the largest source
  Index feature_layer = 0;
};

struct PurifierEpochLog {
  Index epoch = 0;
  double loss = 0;
};

struct PurifierFit {
  PurifierModel model;
  std::vector<PurifierEpochLog> history;
};

// Mini-batch Adam on α·rec + β·pred over a 1:1:1 mix of perturbed malware,
// noisy benign and clean pairs. The detector is only read.
inline PurifierFit fit_purifier(PurifierModel model, const PairSet& adversarial,
                                const PairSet& noisy_benign, const Matrix& clean,
                                const DetectorModel& detector, const PurifierLossWeights& weights,
                                const PurifierTrainConfig& cfg, std::uint64_t seed) {
  weights.validate();
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ConfigError("train_purifier: bad config");
  const std::array<const Matrix*, 3> inputs = {&adversarial.inputs, &noisy_benign.inputs, &clean};
  const std::array<const Matrix*, 3> targets = {&adversarial.originals, &noisy_benign.originals, &clean};
  Index largest = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (inputs[s]->rows() != targets[s]->rows()) throw ShapeError("train_purifier: unpaired source");
    if (inputs[s]->rows() > 0) model.check_dim(inputs[s]->cols());
    largest = std::max(largest, inputs[s]->rows());
  }
  if (largest == 0) throw ConfigError("train_purifier: empty training mix");
  if (model.pass_through()) throw ConfigError("train_purifier: cannot train a pass-through purifier");
  const Index per_source = cfg.samples_per_source > 0 ? cfg.samples_per_source : largest;
  const Index n = cfg.feature_layer > 0 ? cfg.feature_layer : detector.feature_layer();
  detector.check_layer(n);
  const Index dim = model.dim();

  Network net = model.network();
  AdamState adam = AdamState::for_network(net, cfg.adam);
  Rng rng = Rng(seed).fork("purifier-train");

  // Each source is drawn as a cycled random permutation so that every pair is
  // used before any repeats.
  std::array<std::vector<Index>, 3> perm;
  std::array<std::size_t, 3> cursor{};
  for (std::size_t s = 0; s < 3; ++s) {
    perm[s].resize(static_cast<std::size_t>(inputs[s]->rows()));
    std::iota(perm[s].begin(), perm[s].end(), Index{0});
    rng.shuffle(std::span<Index>(perm[s]));
  }

  std::vector<PurifierEpochLog> history;
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::pair<std::size_t, Index>> draws;
    for (std::size_t s = 0; s < 3; ++s) {
      if (perm[s].empty()) continue;
      for (Index k = 0; k < per_source; ++k) {
        if (cursor[s] == perm[s].size()) {
          rng.shuffle(std::span<Index>(perm[s]));
          cursor[s] = 0;
        }
        draws.emplace_back(s, perm[s][cursor[s]++]);
      }
    }
    rng.shuffle(std::span<std::pair<std::size_t, Index>>(draws));

    double loss_sum = 0;
    const auto total = static_cast<Index>(draws.size());
    for (Index start = 0; start < total; start += cfg.batch_size) {
      const Index b = std::min(cfg.batch_size, total - start);
      Matrix xin(b, dim), xout(b, dim);
      for (Index k = 0; k < b; ++k) {
        const auto [s, r] = draws[static_cast<std::size_t>(start + k)];
        xin.row(k) = inputs[s]->row(r);
        xout.row(k) = targets[s]->row(r);
      }
      Tape tape;
      const Matrix rec = net.forward(xin, &tape);
      double loss = 0;
      Matrix up = Matrix::Zero(b, dim);
      if (weights.alpha > 0) {
        loss += weights.alpha * mse(rec, xout);
        up += weights.alpha * mse_slope(rec, xout);
      }
      if (weights.beta > 0) {
        const Matrix target_features = detector.internal_repr(xout, n);
        Tape dtape;
        const Matrix features = detector.network().forward(rec, &dtape, n);
        loss += weights.beta * mse(features, target_features);
        up += weights.beta *
              detector.network().backward(dtape, mse_slope(features, target_features), false).input;
      }
      if (!std::isfinite(loss)) throw NumericError("train_purifier: non-finite loss");
      loss_sum += loss * static_cast<double>(b);
      adam_step(adam, net, net.backward(tape, up).params);
    }
    history.push_back({epoch, loss_sum / static_cast<double>(total)});
  }
  return {PurifierModel(std::move(net), model.seed(), model.attention()), std::move(history)};
}

inline PurifierFit train_purifier(const PairSet& adversarial, const PairSet& noisy_benign,
                                  const LabeledDataset& originals, const DetectorModel& detector,
                                  const PurifierLossWeights& weights, const PurifierTrainConfig& cfg,
                                  std::uint64_t seed, PurifierArchitecture arch = {}) {
  weights.validate();
  arch.input_dim = detector.input_dim();
  return fit_purifier(PurifierModel::initialize(arch, seed), adversarial, noisy_benign,
                      originals.features, detector, weights, cfg, seed);
}

}  // namespace malpurify
