#pragma once

// Text checkpoints: key-value lines (see kvconfig.hpp), every parameter
// tensor on one line as "RxC:v,v,...", doubles printed with 17 significant
// digits so that save -> load -> save reproduces the file byte for byte.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "chainz/experiment.hpp"
#include "chainz/kvconfig.hpp"

namespace chainz {

inline constexpr std::uint64_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelKind kind = ModelKind::Cr;
  Model model;
  std::vector<std::string> feature_names;
  Preprocessing prep;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline std::string join_doubles(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

inline std::string encode_tensor(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ":" + join_doubles(m.data());
}

inline Matrix decode_tensor(const KvConfig& kv, const std::string& key, std::size_t rows, std::size_t cols) {
  const std::string v = kv.get_string(key);
  const auto colon = v.find(':');
  const std::string expect = std::to_string(rows) + "x" + std::to_string(cols);
  if (colon == std::string::npos || v.substr(0, colon) != expect)
    throw ConfigError(key, "expected a " + expect + " tensor");
  KvConfig tmp;
  tmp.set("t", v.substr(colon + 1));
  auto values = tmp.get_double_list("t");
  if (values.size() != rows * cols) throw ConfigError(key, "tensor has " + std::to_string(values.size()) + " values");
  return Matrix(rows, cols, std::move(values));
}

inline std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::ostringstream out;
  auto line = [&](const std::string& k, const std::string& v) { out << k << " = " << v << "\n"; };
  out << "# chainz checkpoint\n";
  line("format_version", std::to_string(kCheckpointVersion));
  line("model.kind", to_string(ck.kind));
  std::visit(
      [&](auto& net) {
        line("model.input_dim", std::to_string(net.input_dim));
        line("model.num_classes", std::to_string(net.num_classes()));
        std::vector<std::size_t> widths;
        for (const auto& l : net.layers) widths.push_back(l.weights.rows());
        line("model.widths", join_sizes(widths));
        if constexpr (std::is_same_v<std::decay_t<decltype(net)>, BaselineNet>)
          line("model.dropout_rate", format_double(net.dropout_rate));
      },
      ck.model);
  if (!ck.feature_names.empty()) line("data.feature_names", detail::join_strings(ck.feature_names));
  line("provenance.seed", std::to_string(ck.seed));
  line("provenance.fraction", format_double(ck.fraction));
  line("provenance.config_hash", hex64(ck.config_hash));
  if (!ck.prep.impute_columns.empty()) {
    line("preprocess.impute_columns", join_sizes(ck.prep.impute_columns));
    line("preprocess.medians", detail::join_doubles(ck.prep.medians));
  }
  line("preprocess.means", detail::join_doubles(ck.prep.means));
  line("preprocess.stds", detail::join_doubles(ck.prep.stds));
  Model copy = ck.model;
  std::visit(
      [&](auto& net) {
        for (const auto& [name, m] : parameters(net)) line("param." + name, detail::encode_tensor(*m));
      },
      copy);
  return out.str();
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  const KvConfig kv = KvConfig::parse_string(text);
  if (kv.get_u64("format_version") != kCheckpointVersion)
    throw ConfigError("format_version", "unsupported checkpoint version");
  Checkpoint ck;
  const std::string kind = kv.get_string("model.kind");
  const auto k = parse_model_kind(kind);
  if (!k) throw ConfigError("model.kind", "unknown model kind '" + kind + "'");
  ck.kind = *k;
  const std::size_t d = kv.get_u64("model.input_dim");
  const std::size_t classes = kv.get_u64("model.num_classes");
  std::vector<std::size_t> widths;
  for (auto w : kv.get_u64_list("model.widths")) widths.push_back(static_cast<std::size_t>(w));
  if (kv.has("data.feature_names")) ck.feature_names = kv.get_list("data.feature_names");
  ck.seed = kv.get_u64("provenance.seed");
  ck.fraction = kv.get_double("provenance.fraction");
  {
    const std::string h = kv.get_string("provenance.config_hash");
    ck.config_hash = std::stoull(h, nullptr, 16);
  }
  if (kv.has("preprocess.impute_columns")) {
    for (auto c : kv.get_u64_list("preprocess.impute_columns")) ck.prep.impute_columns.push_back(c);
    ck.prep.medians = kv.get_double_list("preprocess.medians");
  }
  ck.prep.means = kv.get_double_list("preprocess.means");
  ck.prep.stds = kv.get_double_list("preprocess.stds");
  if (ck.prep.means.size() != d || ck.prep.stds.size() != d ||
      ck.prep.medians.size() != ck.prep.impute_columns.size())
    throw ConfigError("preprocess.means", "preprocessing does not match model.input_dim");

  Rng rng(0);
  if (is_polynomial(ck.kind)) {
    ck.model = make_poly_network(d, widths, classes, rng);
  } else {
    ck.model = make_baseline_network(d, widths, classes, rng, kv.get_double("model.dropout_rate", 0.0));
  }
  std::visit(
      [&](auto& net) {
        for (auto& [name, m] : parameters(net)) *m = detail::decode_tensor(kv, "param." + name, m->rows(), m->cols());
        net.validate();
      },
      ck.model);
  kv.reject_unused();
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out << serialize_checkpoint(ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace chainz
