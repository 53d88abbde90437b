#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "chainz/chainz.hpp"

namespace testing_support {

using chainz::Matrix;

inline std::filesystem::path source_dir() { return CHAINZ_SOURCE_DIR; }
inline std::filesystem::path pima_path() { return source_dir() / "data" / "pima.csv"; }

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::path(CHAINZ_BINARY_DIR) / "scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of f with respect to every entry of m.
inline Matrix fd_grad(Matrix& m, const std::function<double()>& f, double h = 1e-5) {
  Matrix g(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double keep = m[i];
    m[i] = keep + h;
    const double up = f();
    m[i] = keep - h;
    const double down = f();
    m[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline Matrix random_matrix(chainz::Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

// Random net with nontrivial cubic coefficients everywhere.
inline chainz::PolyNetwork random_poly_net(chainz::Rng& rng, std::size_t d, const std::vector<std::size_t>& widths,
                                           std::size_t classes) {
  auto net = chainz::make_poly_network(d, widths, classes, rng);
  for (auto& l : net.layers) {
    for (double& v : l.bias.data()) v = 0.1 * rng.normal();
    for (double& v : l.coeffs.c0.data()) v = 0.1 * rng.normal();
    for (double& v : l.coeffs.c1.data()) v = 1.0 + 0.2 * rng.normal();
    for (double& v : l.coeffs.c2.data()) v = 0.2 * rng.normal();
    for (double& v : l.coeffs.c3.data()) v = 0.1 * rng.normal();
  }
  for (double& v : net.head_bias.data()) v = 0.1 * rng.normal();
  return net;
}

inline chainz::Labels random_labels(chainz::Rng& rng, std::size_t n, std::size_t classes) {
  chainz::Labels y;
  for (std::size_t i = 0; i < n; ++i) y.push_back(static_cast<int>(rng.below(classes)));
  return y;
}

inline int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(CHAINZ_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace testing_support
