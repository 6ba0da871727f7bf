#pragma once

// Model container shared by detector and purifier checkpoints.
//
//   malpurify-checkpoint 1
//   type <detector|purifier>
//   meta <key> <value>            (zero or more)
//   layers <n>
//   dense <in> <out> <activation> | gate <width>   (n lines)
//   params <count>
//   <count little-endian float64 values, layer order, weights then bias>
//
// Real-valued metadata is written as hex floats so that every value survives
// a save/load cycle bit for bit.

#include <bit>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "malpurify/errors.hpp"
#include "malpurify/numeric.hpp"

namespace malpurify {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little endian");

inline constexpr int kCheckpointVersion = 1;

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hexfloat(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("checkpoint: bad real '" + s + "'");
  return v;
}

struct Checkpoint {
  std::string type;
  std::map<std::string, std::string> meta;
  Network network;

  const std::string& at(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) throw FormatError("checkpoint: missing meta '" + key + "'");
    return it->second;
  }
};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out << "malpurify-checkpoint " << kCheckpointVersion << '\n';
  out << "type " << ck.type << '\n';
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw FormatError("checkpoint: meta key/value contains separators");
    out << "meta " << k << ' ' << v << '\n';
  }
  const auto& layers = ck.network.layers();
  out << "layers " << layers.size() << '\n';
  for (const Layer& l : layers) {
    if (l.kind == LayerKind::dense)
      out << "dense " << l.input_dim() << ' ' << l.output_dim() << ' ' << to_string(l.activation) << '\n';
    else
      out << "gate " << l.output_dim() << '\n';
  }
  const std::vector<double> flat = ck.network.flatten();
  out << "params " << flat.size() << '\n';
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& expected_type = "") {
  auto next_line = [&in]() {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("checkpoint: truncated header");
    return line;
  };
  {
    std::istringstream ls(next_line());
    std::string magic;
    int version = 0;
    if (!(ls >> magic >> version) || magic != "malpurify-checkpoint")
      throw FormatError("checkpoint: not a malpurify checkpoint");
    if (version != kCheckpointVersion)
      throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ck;
  {
    std::istringstream ls(next_line());
    std::string tag;
    if (!(ls >> tag >> ck.type) || tag != "type") throw FormatError("checkpoint: missing type");
    if (!expected_type.empty() && ck.type != expected_type)
      throw FormatError("checkpoint: expected type '" + expected_type + "', found '" + ck.type + "'");
  }
  std::string line = next_line();
  while (line.rfind("meta ", 0) == 0) {
    const auto sp = line.find(' ', 5);
    if (sp == std::string::npos) throw FormatError("checkpoint: bad meta line");
    ck.meta[line.substr(5, sp - 5)] = line.substr(sp + 1);
    line = next_line();
  }
  std::size_t n_layers = 0;
  {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag >> n_layers) || tag != "layers") throw FormatError("checkpoint: missing layers");
  }
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < n_layers; ++i) {
    std::istringstream ls(next_line());
    std::string kind;
    ls >> kind;
    if (kind == "dense") {
      long long in_dim = 0, out_dim = 0;
      std::string act;
      if (!(ls >> in_dim >> out_dim >> act) || in_dim < 1 || out_dim < 1)
        throw FormatError("checkpoint: bad dense layer");
      Layer l;
      l.kind = LayerKind::dense;
      l.activation = parse_activation(act);
      l.weight = Matrix::Zero(out_dim, in_dim);
      l.bias = Vector::Zero(out_dim);
      layers.push_back(std::move(l));
    } else if (kind == "gate") {
      long long width = 0;
      if (!(ls >> width) || width < 1) throw FormatError("checkpoint: bad gate layer");
      layers.push_back(Network::gate(width));
    } else {
      throw FormatError("checkpoint: unknown layer kind '" + kind + "'");
    }
  }
  ck.network = Network(std::move(layers));
  std::size_t count = 0;
  {
    std::istringstream ls(next_line());
    std::string tag;
    if (!(ls >> tag >> count) || tag != "params") throw FormatError("checkpoint: missing params");
  }
  if (static_cast<Index>(count) != ck.network.parameter_count())
    throw FormatError("checkpoint: parameter count does not match architecture");
  std::vector<double> flat(count);
  in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
    throw FormatError("checkpoint: truncated parameter payload");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  ck.network.unflatten(flat);
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot write '" + path + "'");
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::string& path, const std::string& expected_type = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open '" + path + "'");
  return read_checkpoint(in, expected_type);
}

}  // namespace malpurify
