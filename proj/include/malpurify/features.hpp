#pragma once

// Binary feature vectors, labelled datasets, the sparse text format, the
// synthetic generator and the manipulation box.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "malpurify/errors.hpp"
#include "malpurify/numeric.hpp"
#include "malpurify/rng.hpp"

namespace malpurify {

enum class Label : std::uint8_t { benign = 0, malicious = 1 };

inline double to_double(Label l) { return l == Label::malicious ? 1.0 : 0.0; }

inline bool is_binary(const Matrix& m) {
  return (m.array() == 0.0 || m.array() == 1.0).all();
}
inline bool is_binary(const Vector& v) {
  return (v.array() == 0.0 || v.array() == 1.0).all();
}

// Round at 0.5, ties to 1.
inline Matrix binarize(const Matrix& m) {
  return m.unaryExpr([](double v) { return v >= 0.5 ? 1.0 : 0.0; });
}
inline Vector binarize(const Vector& v) {
  return v.unaryExpr([](double x) { return x >= 0.5 ? 1.0 : 0.0; });
}

// Rounds up with probability equal to the fractional part of the value
// clamped to [0, 1].
inline Matrix randomized_round(const Matrix& m, Rng& rng) {
  Matrix out(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      const double v = std::clamp(m(r, c), 0.0, 1.0);
      out(r, c) = rng.uniform() < v ? 1.0 : 0.0;
    }
  return out;
}

struct LabeledDataset {
  Matrix features;  // one sample per row, entries in {0,1}
  std::vector<Label> labels;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  bool empty() const { return size() == 0; }

  Vector sample(Index i) const { return features.row(i).transpose(); }

  Vector label_vector() const {
    Vector y(size());
    for (Index i = 0; i < size(); ++i) y(i) = to_double(labels[static_cast<std::size_t>(i)]);
    return y;
  }

  LabeledDataset subset(std::span<const Index> rows) const {
    LabeledDataset out;
    out.features.resize(static_cast<Index>(rows.size()), dim());
    out.labels.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.features.row(static_cast<Index>(k)) = features.row(rows[k]);
      out.labels.push_back(labels[static_cast<std::size_t>(rows[k])]);
    }
    return out;
  }

  std::vector<Index> indices_of(Label l) const {
    std::vector<Index> idx;
    for (Index i = 0; i < size(); ++i)
      if (labels[static_cast<std::size_t>(i)] == l) idx.push_back(i);
    return idx;
  }

  LabeledDataset with_label(Label l) const {
    const auto idx = indices_of(l);
    return subset(idx);
  }

  void validate() const {
    if (static_cast<std::size_t>(size()) != labels.size())
      throw ShapeError("dataset: feature rows and labels disagree");
    if (!is_binary(features)) throw FormatError("dataset: non-binary feature value");
  }
};

// ---------------------------------------------------------------------------
// Sparse text format:
//   #dim <d>
//   <label> <idx>:1 <idx>:1 ...     (0-based, strictly increasing)

inline LabeledDataset parse_sparse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("sparse: missing '#dim' header");
  Index dim = 0;
  {
    std::istringstream hs(line);
    std::string tag;
    long long d = -1;
    if (!(hs >> tag >> d) || tag != "#dim" || d < 1)
      throw FormatError("sparse: bad header '" + line + "'");
    std::string rest;
    if (hs >> rest) throw FormatError("sparse: trailing tokens in header");
    dim = static_cast<Index>(d);
  }

  std::vector<std::vector<Index>> rows;
  std::vector<Label> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = " (line " + std::to_string(lineno) + ")";
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "0") {
      labels.push_back(Label::benign);
    } else if (tok == "1") {
      labels.push_back(Label::malicious);
    } else {
      throw FormatError("sparse: label must be 0 or 1" + where);
    }
    std::vector<Index> on;
    long long prev = -1;
    while (ls >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size())
        throw FormatError("sparse: malformed token '" + tok + "'" + where);
      long long idx = 0;
      std::size_t used = 0;
      try {
        idx = std::stoll(tok.substr(0, colon), &used);
      } catch (const std::exception&) {
        throw FormatError("sparse: bad index in '" + tok + "'" + where);
      }
      if (used != colon || idx < 0) throw FormatError("sparse: bad index in '" + tok + "'" + where);
      if (idx >= dim) throw FormatError("sparse: index " + std::to_string(idx) + " >= dim" + where);
      if (idx <= prev) throw FormatError("sparse: indices not strictly increasing" + where);
      prev = idx;
      const std::string value = tok.substr(colon + 1);
      if (value != "1") throw FormatError("sparse: non-binary value '" + value + "'" + where);
      on.push_back(static_cast<Index>(idx));
    }
    rows.push_back(std::move(on));
  }

  LabeledDataset ds;
  ds.features = Matrix::Zero(static_cast<Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Index c : rows[r]) ds.features(static_cast<Index>(r), c) = 1.0;
  ds.labels = std::move(labels);
  return ds;
}

inline LabeledDataset load_sparse(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("sparse: cannot open '" + path + "'");
  return parse_sparse(in);
}

inline void write_sparse(std::ostream& out, const LabeledDataset& ds) {
  ds.validate();
  out << "#dim " << ds.dim() << '\n';
  for (Index r = 0; r < ds.size(); ++r) {
    out << (ds.labels[static_cast<std::size_t>(r)] == Label::malicious ? '1' : '0');
    for (Index c = 0; c < ds.dim(); ++c)
      if (ds.features(r, c) == 1.0) out << ' ' << c << ":1";
    out << '\n';
  }
}

inline void save_sparse(const std::string& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("sparse: cannot write '" + path + "'");
  write_sparse(out, ds);
}

// ---------------------------------------------------------------------------
// Synthetic data

// Half of the signal features are malware-indicative, half benign-indicative.
// A sample turns on each feature of its own class with `signal_rate`, each
// feature of the other class with `noise_rate`, and each remaining feature
// with `background_rate`. Every sample carries at least one feature of its
// own class, so noise_rate = 0 gives a linearly separable set.
struct SyntheticConfig {
  std::uint64_t seed = 7;
  Index n_benign = 1000;
  Index n_malicious = 1000;
  Index dim = 500;
  Index signal_features = 40;
  double noise_rate = 0.05;
  double signal_rate = 0.5;
  double background_rate = 0.02;
};

struct SyntheticLayout {
  std::vector<Index> malicious_signal;
  std::vector<Index> benign_signal;
};

inline SyntheticLayout synthetic_layout(const SyntheticConfig& cfg) {
  std::vector<Index> perm(static_cast<std::size_t>(cfg.dim));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = Rng(cfg.seed).fork("signal-layout");
  rng.shuffle(std::span<Index>(perm));
  const auto n_mal = static_cast<std::size_t>((cfg.signal_features + 1) / 2);
  SyntheticLayout layout;
  layout.malicious_signal.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_mal));
  layout.benign_signal.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_mal),
                              perm.begin() + cfg.signal_features);
  return layout;
}

inline LabeledDataset generate_synthetic(const SyntheticConfig& cfg) {
  auto rate_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (cfg.dim < 2 || cfg.signal_features < 2 || cfg.signal_features > cfg.dim)
    throw ConfigError("synthetic: need 2 <= signal_features <= dim");
  if (cfg.n_benign < 1 || cfg.n_malicious < 1)
    throw ConfigError("synthetic: both classes need at least one sample");
  if (!rate_ok(cfg.noise_rate) || !rate_ok(cfg.signal_rate) || !rate_ok(cfg.background_rate))
    throw ConfigError("synthetic: rates must lie in [0, 1]");

  const SyntheticLayout layout = synthetic_layout(cfg);
  std::vector<int> role(static_cast<std::size_t>(cfg.dim), 0);  // 0 bg, 1 mal, 2 ben
  for (Index i : layout.malicious_signal) role[static_cast<std::size_t>(i)] = 1;
  for (Index i : layout.benign_signal) role[static_cast<std::size_t>(i)] = 2;

  const Index n = cfg.n_benign + cfg.n_malicious;
  std::vector<Label> labels(static_cast<std::size_t>(n), Label::benign);
  for (Index i = cfg.n_benign; i < n; ++i) labels[static_cast<std::size_t>(i)] = Label::malicious;
  Rng rng = Rng(cfg.seed).fork("synthetic-samples");
  rng.shuffle(std::span<Label>(labels));

  LabeledDataset ds;
  ds.features = Matrix::Zero(n, cfg.dim);
  ds.labels = labels;
  for (Index r = 0; r < n; ++r) {
    const int own = labels[static_cast<std::size_t>(r)] == Label::malicious ? 1 : 2;
    bool any_own = false;
    for (Index c = 0; c < cfg.dim; ++c) {
      const int kind = role[static_cast<std::size_t>(c)];
      const double p = kind == 0 ? cfg.background_rate : (kind == own ? cfg.signal_rate : cfg.noise_rate);
      if (rng.bernoulli(p)) {
        ds.features(r, c) = 1.0;
        any_own = any_own || kind == own;
      }
    }
    if (!any_own) {
      const auto& pool = own == 1 ? layout.malicious_signal : layout.benign_signal;
      ds.features(r, pool[static_cast<std::size_t>(rng.below(pool.size()))]) = 1.0;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
};

struct Splits {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

inline Splits split(const LabeledDataset& ds, const SplitSpec& spec) {
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw ConfigError("split: fractions must be non-negative and sum to 1");
  const Index n = ds.size();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = Rng(spec.seed).fork("split");
  rng.shuffle(std::span<Index>(perm));
  const auto n_train = std::min<Index>(n, std::llround(static_cast<double>(n) * spec.train));
  const auto n_val = std::min<Index>(n - n_train, std::llround(static_cast<double>(n) * spec.val));
  const auto b = perm.begin();
  Splits s;
  s.train = ds.subset(std::vector<Index>(b, b + n_train));
  s.val = ds.subset(std::vector<Index>(b + n_train, b + n_train + n_val));
  s.test = ds.subset(std::vector<Index>(b + n_train + n_val, perm.end()));
  return s;
}

// ---------------------------------------------------------------------------
// Manipulation box [lower, upper], one row per sample.

enum class BoundsPolicy { add_only, free };

inline BoundsPolicy parse_bounds_policy(std::string_view s) {
  if (s == "add-only") return BoundsPolicy::add_only;
  if (s == "free") return BoundsPolicy::free;
  throw ConfigError("unknown manipulation policy '" + std::string(s) + "'");
}

inline std::string_view to_string(BoundsPolicy p) {
  return p == BoundsPolicy::add_only ? "add-only" : "free";
}

struct ManipulationBounds {
  Matrix lower;
  Matrix upper;

  Index rows() const { return lower.rows(); }

  Matrix project(const Matrix& m) const { return m.cwiseMax(lower).cwiseMin(upper); }

  bool contains(const Matrix& m) const {
    return m.rows() == lower.rows() && m.cols() == lower.cols() &&
           (m.array() >= lower.array()).all() && (m.array() <= upper.array()).all();
  }

  ManipulationBounds rows_at(std::span<const Index> idx) const {
    ManipulationBounds b;
    b.lower.resize(static_cast<Index>(idx.size()), lower.cols());
    b.upper.resize(static_cast<Index>(idx.size()), upper.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      b.lower.row(static_cast<Index>(k)) = lower.row(idx[k]);
      b.upper.row(static_cast<Index>(k)) = upper.row(idx[k]);
    }
    return b;
  }
};

inline ManipulationBounds default_bounds(const Matrix& x, BoundsPolicy policy) {
  if (!is_binary(x)) throw FormatError("bounds: sample is not binary");
  ManipulationBounds b;
  b.upper = Matrix::Ones(x.rows(), x.cols());
  b.lower = policy == BoundsPolicy::add_only ? x : Matrix::Zero(x.rows(), x.cols());
  return b;
}

inline ManipulationBounds default_bounds(const Vector& x, BoundsPolicy policy) {
  return default_bounds(Matrix(x.transpose()), policy);
}

inline ManipulationBounds default_bounds(const Vector& x, std::string_view policy) {
  return default_bounds(x, parse_bounds_policy(policy));
}

}  // namespace malpurify
