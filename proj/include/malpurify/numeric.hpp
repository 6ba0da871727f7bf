#pragma once

// Dense layered networks with a hand-written reverse pass. Batches are stored
// one sample per row; every layer keeps what its backward step needs on a Tape.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "malpurify/errors.hpp"
#include "malpurify/rng.hpp"

namespace malpurify {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

enum class Activation { identity, sigmoid, elu };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::elu: return "elu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "identity") return Activation::identity;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "elu") return Activation::elu;
  throw FormatError("unknown activation '" + std::string(s) + "'");
}

struct LayerSpec {
  Index input_dim = 0;
  Index output_dim = 0;
  Activation activation = Activation::identity;
};

enum class LayerKind { dense, gate };

// A dense layer computes act(x W^T + b). A gate layer multiplies its input
// elementwise by sigmoid(bias) and has no weight matrix.
struct Layer {
  LayerKind kind = LayerKind::dense;
  Activation activation = Activation::identity;
  Matrix weight;  // output_dim x input_dim
  Vector bias;

  Index input_dim() const { return kind == LayerKind::dense ? weight.cols() : bias.size(); }
  Index output_dim() const { return bias.size(); }
};

struct LayerGrad {
  Matrix weight;
  Vector bias;
};
using Gradients = std::vector<LayerGrad>;

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void activate(Activation a, Matrix& z) {
  switch (a) {
    case Activation::identity: break;
    case Activation::sigmoid: z = z.unaryExpr([](double v) { return sigmoid(v); }); break;
    case Activation::elu:
      z = z.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); });
      break;
  }
}

// d act / d z expressed through the activation output.
inline Matrix activation_slope(Activation a, const Matrix& out) {
  switch (a) {
    case Activation::identity: return Matrix::Ones(out.rows(), out.cols());
    case Activation::sigmoid: return out.array() * (1.0 - out.array());
    case Activation::elu:
      return out.unaryExpr([](double v) { return v > 0 ? 1.0 : v + 1.0; });
  }
  return Matrix();
}

}  // namespace detail

class Network;

// Activation record of one forward pass. Valid only for the network (and the
// parameter version) that produced it.
struct Tape {
  const Network* owner = nullptr;
  std::uint64_t version = 0;
  std::vector<Matrix> inputs;
  std::vector<Matrix> outputs;

  Index depth() const { return static_cast<Index>(outputs.size()); }
  const Matrix& output() const { return outputs.back(); }
};

class Network {
 public:
  struct Backward {
    Gradients params;  // empty when parameter gradients were not requested
    Matrix input;
  };

  Network() = default;

  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      if (l.kind == LayerKind::dense && l.weight.rows() != l.bias.size())
        throw ShapeError("dense layer weight/bias mismatch");
      if (l.output_dim() < 1 || l.input_dim() < 1) throw ShapeError("layer dims must be >= 1");
      if (i > 0 && layers_[i - 1].output_dim() != l.input_dim())
        throw ShapeError("consecutive layers do not chain");
    }
  }

  // Glorot-uniform weights, zero biases.
  static Network dense(std::span<const LayerSpec> specs, Rng& rng) {
    std::vector<Layer> layers;
    layers.reserve(specs.size());
    for (const LayerSpec& s : specs) {
      if (s.input_dim < 1 || s.output_dim < 1) throw ShapeError("layer dims must be >= 1");
      Layer l;
      l.kind = LayerKind::dense;
      l.activation = s.activation;
      const double limit = std::sqrt(6.0 / static_cast<double>(s.input_dim + s.output_dim));
      l.weight.resize(s.output_dim, s.input_dim);
      for (Index r = 0; r < l.weight.rows(); ++r)
        for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(-limit, limit);
      l.bias = Vector::Zero(s.output_dim);
      layers.push_back(std::move(l));
    }
    return Network(std::move(layers));
  }

  static Layer gate(Index width, double initial_logit = 0.0) {
    Layer l;
    l.kind = LayerKind::gate;
    l.bias = Vector::Constant(width, initial_logit);
    return l;
  }

  Index depth() const { return static_cast<Index>(layers_.size()); }
  Index input_dim() const { return layers_.empty() ? 0 : layers_.front().input_dim(); }
  Index output_dim() const { return layers_.empty() ? 0 : layers_.back().output_dim(); }
  std::uint64_t version() const { return version_; }

  const std::vector<Layer>& layers() const { return layers_; }

  // Any mutable access invalidates outstanding tapes.
  std::vector<Layer>& mutable_layers() {
    ++version_;
    return layers_;
  }

  // Runs layers [0, upto); upto < 0 means the whole network.
  Matrix forward(const Matrix& x, Tape* tape = nullptr, Index upto = -1) const {
    if (upto < 0) upto = depth();
    if (upto > depth()) throw ShapeError("forward past the last layer");
    if (x.cols() != input_dim())
      throw ShapeError("input width " + std::to_string(x.cols()) + " != network input " +
                       std::to_string(input_dim()));
    if (tape) {
      tape->owner = this;
      tape->version = version_;
      tape->inputs.clear();
      tape->outputs.clear();
    }
    Matrix h = x;
    for (Index i = 0; i < upto; ++i) {
      const Layer& l = layers_[static_cast<std::size_t>(i)];
      Matrix out;
      if (l.kind == LayerKind::dense) {
        out.noalias() = h * l.weight.transpose();
        out.rowwise() += l.bias.transpose();
        detail::activate(l.activation, out);
      } else {
        const RowVector g = l.bias.unaryExpr([](double v) { return detail::sigmoid(v); }).transpose();
        out = h.array().rowwise() * g.array();
      }
      if (tape) {
        tape->inputs.push_back(std::move(h));
        tape->outputs.push_back(out);
      }
      h = std::move(out);
    }
    return h;
  }

  Vector forward(const Vector& x) const {
    Matrix row = x.transpose();
    return forward(row).row(0).transpose();
  }

  // Reverse pass from the last recorded layer. `upstream` is dLoss/d(output).
  Backward backward(const Tape& tape, const Matrix& upstream, bool want_params = true) const {
    if (tape.owner != this || tape.version != version_)
      throw StaleTapeError("tape does not belong to the current network parameters");
    if (tape.depth() == 0) throw StaleTapeError("empty tape");
    if (upstream.rows() != tape.output().rows() || upstream.cols() != tape.output().cols())
      throw ShapeError("upstream gradient shape does not match tape output");

    Backward result;
    if (want_params) result.params.resize(static_cast<std::size_t>(tape.depth()));
    Matrix g = upstream;
    for (Index i = tape.depth() - 1; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      const Layer& l = layers_[ui];
      const Matrix& in = tape.inputs[ui];
      if (l.kind == LayerKind::dense) {
        Matrix dz = g.cwiseProduct(detail::activation_slope(l.activation, tape.outputs[ui]));
        if (want_params) {
          result.params[ui].weight.noalias() = dz.transpose() * in;
          result.params[ui].bias = dz.colwise().sum().transpose();
        }
        Matrix next;
        next.noalias() = dz * l.weight;
        g = std::move(next);
      } else {
        const Vector s = l.bias.unaryExpr([](double v) { return detail::sigmoid(v); });
        if (want_params) {
          const Vector through = g.cwiseProduct(in).colwise().sum().transpose();
          result.params[ui].bias = through.array() * s.array() * (1.0 - s.array());
        }
        g = g.array().rowwise() * s.transpose().array();
      }
    }
    result.input = std::move(g);
    return result;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Layer order, weight (row-major) before bias.
  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(parameter_count()));
    for (const Layer& l : layers_) {
      flat.insert(flat.end(), l.weight.data(), l.weight.data() + l.weight.size());
      flat.insert(flat.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return flat;
  }

  void unflatten(std::span<const double> flat) {
    if (static_cast<Index>(flat.size()) != parameter_count())
      throw ShapeError("flat parameter count mismatch");
    std::size_t at = 0;
    for (Layer& l : mutable_layers()) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l.weight.size(), l.weight.data());
      at += static_cast<std::size_t>(l.weight.size());
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l.bias.size(), l.bias.data());
      at += static_cast<std::size_t>(l.bias.size());
    }
  }

  Gradients zero_gradients() const {
    Gradients g(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      g[i].weight = Matrix::Zero(layers_[i].weight.rows(), layers_[i].weight.cols());
      g[i].bias = Vector::Zero(layers_[i].bias.size());
    }
    return g;
  }

 private:
  std::vector<Layer> layers_;
  std::uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kBceEpsilon = 1e-7;

inline double binary_cross_entropy(double pred, double label) {
  const double p = std::clamp(pred, kBceEpsilon, 1.0 - kBceEpsilon);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

// d bce / d pred, evaluated at the clamped prediction.
inline double binary_cross_entropy_slope(double pred, double label) {
  const double p = std::clamp(pred, kBceEpsilon, 1.0 - kBceEpsilon);
  return -label / p + (1.0 - label) / (1.0 - p);
}

// Mean over every element.
inline double mse(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mse: shape mismatch");
  if (a.size() == 0) throw ShapeError("mse: empty input");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

inline double mse(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("mse: length mismatch");
  if (a.size() == 0) throw ShapeError("mse: empty input");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

// d mse(a, b) / d a
inline Matrix mse_slope(const Matrix& a, const Matrix& b) {
  return 2.0 * (a - b) / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  Gradients first;
  Gradients second;

  static AdamState for_network(const Network& net, AdamConfig config = {}) {
    AdamState s;
    s.config = config;
    s.first = net.zero_gradients();
    s.second = net.zero_gradients();
    return s;
  }
};

namespace detail {

template <typename Param, typename Grad>
void adam_block(Param& p, const Grad& g, Param& m, Param& v, const AdamConfig& c, double bc1,
                double bc2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  p.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
}

}  // namespace detail

inline void adam_step(AdamState& state, Network& net, const Gradients& grads) {
  const auto& layers = net.layers();
  if (grads.size() != layers.size() || state.first.size() != layers.size())
    throw ShapeError("adam: gradient/parameter layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (grads[i].weight.rows() != layers[i].weight.rows() ||
        grads[i].weight.cols() != layers[i].weight.cols() ||
        grads[i].bias.size() != layers[i].bias.size())
      throw ShapeError("adam: gradient shape mismatch at layer " + std::to_string(i));
    if (!grads[i].weight.allFinite() || !grads[i].bias.allFinite())
      throw NumericError("adam: non-finite gradient at layer " + std::to_string(i));
  }
  ++state.step_count;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
  auto& mut = net.mutable_layers();
  for (std::size_t i = 0; i < mut.size(); ++i) {
    if (mut[i].weight.size() > 0)
      detail::adam_block(mut[i].weight, grads[i].weight, state.first[i].weight,
                         state.second[i].weight, c, bc1, bc2);
    detail::adam_block(mut[i].bias, grads[i].bias, state.first[i].bias, state.second[i].bias, c,
                       bc1, bc2);
  }
}

}  // namespace malpurify
