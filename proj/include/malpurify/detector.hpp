#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "malpurify/checkpoint.hpp"
#include "malpurify/errors.hpp"
#include "malpurify/features.hpp"
#include "malpurify/numeric.hpp"
#include "malpurify/rng.hpp"

namespace malpurify {

struct DetectorArchitecture {
  Index input_dim = 500;
  std::vector<Index> hidden = {200, 200};
  Activation hidden_activation = Activation::elu;
  // Layer whose activations feed the feature-space distance; 0 picks the last
  // hidden layer (or the output layer of a network without hidden layers).
  Index feature_layer = 0;
  double threshold = 0.5;
};

struct DetectorTrainConfig {
  Index epochs = 100;
  Index batch_size = 128;
  AdamConfig adam{};
};

struct EpochLog {
  Index epoch = 0;
  double train_loss = 0;
  double val_accuracy = 0;
};

struct Prediction {
  double score = 0;
  Label label = Label::benign;
};

// Binary malware classifier: an MLP ending in a single sigmoid unit whose
// output is the malicious score. Parameters are fixed once constructed.
class DetectorModel {
 public:
  DetectorModel(Network net, double threshold, std::uint64_t seed, Index feature_layer)
      : net_(std::move(net)), threshold_(threshold), seed_(seed), feature_layer_(feature_layer) {
    if (net_.depth() < 1 || net_.output_dim() != 1)
      throw ShapeError("detector: network must end in a single output unit");
    if (net_.layers().back().activation != Activation::sigmoid)
      throw ShapeError("detector: output layer must be sigmoid");
    if (feature_layer_ == 0) feature_layer_ = net_.depth() > 1 ? net_.depth() - 1 : 1;
    if (feature_layer_ < 1 || feature_layer_ > net_.depth())
      throw ShapeError("detector: feature layer out of range");
  }

  static std::vector<LayerSpec> layer_specs(const DetectorArchitecture& arch) {
    std::vector<LayerSpec> specs;
    Index in = arch.input_dim;
    for (Index h : arch.hidden) {
      specs.push_back({in, h, arch.hidden_activation});
      in = h;
    }
    specs.push_back({in, 1, Activation::sigmoid});
    return specs;
  }

  static DetectorModel initialize(const DetectorArchitecture& arch, std::uint64_t seed) {
    Rng rng = Rng(seed).fork("detector-init");
    const auto specs = layer_specs(arch);
    return DetectorModel(Network::dense(specs, rng), arch.threshold, seed, arch.feature_layer);
  }

  const Network& network() const { return net_; }
  double threshold() const { return threshold_; }
  std::uint64_t seed() const { return seed_; }
  Index depth() const { return net_.depth(); }
  Index input_dim() const { return net_.input_dim(); }
  Index feature_layer() const { return feature_layer_; }

  const std::vector<EpochLog>& history() const { return history_; }
  void set_history(std::vector<EpochLog> h) { history_ = std::move(h); }
  const DetectorTrainConfig& train_config() const { return train_config_; }
  void set_train_config(const DetectorTrainConfig& c) { train_config_ = c; }

  void check_dim(Index cols) const {
    if (cols != input_dim())
      throw ShapeError("detector: expected dim " + std::to_string(input_dim()) + ", got " +
                       std::to_string(cols));
  }

  Vector scores(const Matrix& x) const {
    check_dim(x.cols());
    return net_.forward(x).col(0);
  }

  Label label_for(double score) const {
    return score >= threshold_ ? Label::malicious : Label::benign;
  }

  std::vector<Label> labels(const Matrix& x) const {
    const Vector s = scores(x);
    std::vector<Label> out(static_cast<std::size_t>(s.size()));
    for (Index i = 0; i < s.size(); ++i) out[static_cast<std::size_t>(i)] = label_for(s(i));
    return out;
  }

  Prediction predict(const Vector& x) const {
    check_dim(x.size());
    const double s = net_.forward(x)(0);
    return {s, label_for(s)};
  }

  void check_layer(Index n) const {
    if (n < 1 || n > depth())
      throw ShapeError("detector: layer " + std::to_string(n) + " outside [1, " +
                       std::to_string(depth()) + "]");
  }

  // Post-activation output of layer n (1-based), one row per sample.
  Matrix internal_repr(const Matrix& x, Index n) const {
    check_layer(n);
    check_dim(x.cols());
    return net_.forward(x, nullptr, n);
  }

  Vector internal_repr(const Vector& x, Index n) const {
    return internal_repr(Matrix(x.transpose()), n).row(0).transpose();
  }

  // Gradient of sum_i <upstream_i, F_n(x_i)> with respect to x.
  Matrix internal_input_gradient(const Matrix& x, Index n, const Matrix& upstream) const {
    check_layer(n);
    check_dim(x.cols());
    Tape tape;
    net_.forward(x, &tape, n);
    return net_.backward(tape, upstream, false).input;
  }

  // Malicious score per row and its gradient with respect to the input.
  std::pair<Vector, Matrix> score_and_gradient(const Matrix& x) const {
    check_dim(x.cols());
    Tape tape;
    Vector s = net_.forward(x, &tape).col(0);
    Matrix grad = net_.backward(tape, Matrix::Ones(x.rows(), 1), false).input;
    return {std::move(s), std::move(grad)};
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.type = "detector";
    ck.meta["threshold"] = hexfloat(threshold_);
    ck.meta["seed"] = std::to_string(seed_);
    ck.meta["feature_layer"] = std::to_string(feature_layer_);
    ck.meta["epochs"] = std::to_string(train_config_.epochs);
    ck.meta["batch_size"] = std::to_string(train_config_.batch_size);
    ck.meta["learning_rate"] = hexfloat(train_config_.adam.learning_rate);
    ck.network = net_;
    return ck;
  }

  static DetectorModel from_checkpoint(const Checkpoint& ck) {
    if (ck.type != "detector") throw FormatError("checkpoint is not a detector");
    DetectorModel m(ck.network, parse_hexfloat(ck.at("threshold")), std::stoull(ck.at("seed")),
                    std::stoll(ck.at("feature_layer")));
    DetectorTrainConfig c;
    c.epochs = std::stoll(ck.at("epochs"));
    c.batch_size = std::stoll(ck.at("batch_size"));
    c.adam.learning_rate = parse_hexfloat(ck.at("learning_rate"));
    m.set_train_config(c);
    return m;
  }

 private:
  Network net_;
  double threshold_ = 0.5;
  std::uint64_t seed_ = 0;
  Index feature_layer_ = 0;
  DetectorTrainConfig train_config_{};
  std::vector<EpochLog> history_;
};

inline double accuracy(const DetectorModel& model, const LabeledDataset& ds) {
  if (ds.empty()) return 0.0;
  const auto pred = model.labels(ds.features);
  Index correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// Δ(a, b) = MSE(F_n(a), F_n(b)) per row and its gradient with respect to b.
struct FeatureDistance {
  Vector values;
  Matrix grad_b;
};

inline FeatureDistance feature_distance(const DetectorModel& model, const Matrix& a, const Matrix& b,
                                        Index n) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("feature distance: shape mismatch");
  model.check_layer(n);
  model.check_dim(b.cols());
  const Matrix fa = model.internal_repr(a, n);
  Tape tape;
  const Matrix fb = model.network().forward(b, &tape, n);
  const Matrix diff = fb - fa;
  const auto width = static_cast<double>(diff.cols());
  FeatureDistance out;
  out.values = diff.rowwise().squaredNorm() / width;
  out.grad_b = model.network().backward(tape, 2.0 * diff / width, false).input;
  return out;
}

inline double internal_feature_distance(const DetectorModel& model, const Vector& a, const Vector& b,
                                        Index n) {
  if (a.size() != b.size()) throw ShapeError("feature distance: length mismatch");
  return feature_distance(model, Matrix(a.transpose()), Matrix(b.transpose()), n).values(0);
}

// One optimisation pass over `train` with mini-batch Adam on mean BCE. The
// optional hook may rewrite each batch (used by adversarial training).
using BatchHook = std::function<void(const Network&, Matrix& batch, const Vector& labels, Rng& rng)>;

inline DetectorModel fit_detector(const LabeledDataset& train, const LabeledDataset& val,
                                  const DetectorArchitecture& arch, const DetectorTrainConfig& cfg,
                                  std::uint64_t seed, const BatchHook& hook = {}) {
  if (train.empty()) throw ConfigError("train_detector: empty training set");
  train.validate();
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ConfigError("train_detector: bad config");
  DetectorArchitecture a = arch;
  a.input_dim = train.dim();
  DetectorModel init = DetectorModel::initialize(a, seed);
  Network net = init.network();
  AdamState adam = AdamState::for_network(net, cfg.adam);
  Rng shuffle_rng = Rng(seed).fork("detector-shuffle");
  Rng hook_rng = Rng(seed).fork("detector-hook");

  const Vector y_all = train.label_vector();
  std::vector<Index> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<EpochLog> history;
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<Index>(order));
    double loss_sum = 0;
    for (Index start = 0; start < train.size(); start += cfg.batch_size) {
      const Index b = std::min(cfg.batch_size, train.size() - start);
      Matrix xb(b, train.dim());
      Vector yb(b);
      for (Index k = 0; k < b; ++k) {
        const Index r = order[static_cast<std::size_t>(start + k)];
        xb.row(k) = train.features.row(r);
        yb(k) = y_all(r);
      }
      if (hook) hook(net, xb, yb, hook_rng);
      Tape tape;
      const Matrix p = net.forward(xb, &tape);
      Matrix up(b, 1);
      double loss = 0;
      for (Index k = 0; k < b; ++k) {
        loss += binary_cross_entropy(p(k, 0), yb(k));
        up(k, 0) = binary_cross_entropy_slope(p(k, 0), yb(k)) / static_cast<double>(b);
      }
      if (!std::isfinite(loss)) throw NumericError("train_detector: non-finite loss");
      loss_sum += loss;
      adam_step(adam, net, net.backward(tape, up).params);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(train.size());
    if (!val.empty()) {
      DetectorModel probe(net, a.threshold, seed, a.feature_layer);
      log.val_accuracy = accuracy(probe, val);
    }
    history.push_back(log);
  }
  DetectorModel model(std::move(net), a.threshold, seed, a.feature_layer);
  model.set_train_config(cfg);
  model.set_history(std::move(history));
  return model;
}

inline DetectorModel train_detector(const LabeledDataset& train, const LabeledDataset& val,
                                    const DetectorTrainConfig& cfg, std::uint64_t seed,
                                    const DetectorArchitecture& arch = {}) {
  return fit_detector(train, val, arch, cfg, seed);
}

inline double mean_bce(const DetectorModel& model, const LabeledDataset& ds) {
  const Vector s = model.scores(ds.features);
  double loss = 0;
  for (Index i = 0; i < s.size(); ++i)
    loss += binary_cross_entropy(s(i), to_double(ds.labels[static_cast<std::size_t>(i)]));
  return loss / static_cast<double>(s.size());
}

}  // namespace malpurify
