#pragma once

// Piecewise-linear MLP baselines: max(0, z) hidden units, optional inverted
// dropout, and the same head and parameter layout conventions as PolyNetwork.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "chainz/linalg.hpp"
#include "chainz/loss.hpp"
#include "chainz/polynet.hpp"

namespace chainz {

struct DenseLayer {
  Matrix weights;  // out x in
  Matrix bias;     // 1 x out

  std::size_t out_width() const { return weights.rows(); }
};

struct BaselineNet {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;
  Matrix head_weights;
  Matrix head_bias;
  double dropout_rate = 0.0;

  std::size_t num_classes() const { return head_weights.rows(); }
  std::size_t depth() const { return layers.size(); }

  void validate() const {
    if (layers.empty()) throw ShapeError("BaselineNet: at least one layer required");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ArgumentError("BaselineNet: dropout rate outside [0, 1)");
    std::size_t prev = input_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].weights.cols() != prev)
        throw ShapeError("BaselineNet: layer " + std::to_string(l) + " expects input width " +
                         std::to_string(layers[l].weights.cols()) + ", got " + std::to_string(prev));
      if (layers[l].bias.rows() != 1 || layers[l].bias.cols() != layers[l].out_width())
        throw ShapeError("BaselineNet: layer " + std::to_string(l) + " bias shape");
      prev = layers[l].out_width();
    }
    if (head_weights.cols() != prev || head_weights.rows() == 0)
      throw ShapeError("BaselineNet: head does not conform to last layer");
    if (head_bias.rows() != 1 || head_bias.cols() != head_weights.rows())
      throw ShapeError("BaselineNet: head bias shape");
  }

  std::size_t parameter_count() const {
    std::size_t n = head_weights.size() + head_bias.size();
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }
};

inline ParamList parameters(BaselineNet& net) {
  ParamList out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "weights", &net.layers[l].weights);
    out.emplace_back(p + "bias", &net.layers[l].bias);
  }
  out.emplace_back("head.weights", &net.head_weights);
  out.emplace_back("head.bias", &net.head_bias);
  return out;
}

inline BaselineNet make_baseline_network(std::size_t input_dim, const std::vector<std::size_t>& widths,
                                         std::size_t num_classes, Rng& rng, double dropout_rate = 0.0) {
  if (input_dim == 0 || num_classes == 0 || widths.empty())
    throw ShapeError("make_baseline_network: degenerate architecture");
  BaselineNet net;
  net.input_dim = input_dim;
  net.dropout_rate = dropout_rate;
  std::size_t prev = input_dim;
  for (std::size_t w : widths) {
    if (w == 0) throw ShapeError("make_baseline_network: zero width layer");
    net.layers.push_back({gauss_init(rng, w, prev, 1.0 / std::sqrt(static_cast<double>(prev))),
                          Matrix(1, w)});
    prev = w;
  }
  net.head_weights = gauss_init(rng, num_classes, prev, 1.0 / std::sqrt(static_cast<double>(prev)));
  net.head_bias = Matrix(1, num_classes);
  net.validate();
  return net;
}

enum class Mode { Train, Eval };

struct BaselineCache {
  std::vector<Matrix> preacts;
  std::vector<Matrix> acts;   // after ReLU and dropout
  std::vector<Matrix> masks;  // scaled keep masks; empty in eval mode or at rate 0
};

// Fresh inverted-dropout mask: entries are 0 or 1/(1-rate).
inline Matrix dropout_mask(Rng& rng, std::size_t rows, std::size_t cols, double rate) {
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : m.data()) v = rng.uniform() < rate ? 0.0 : keep;
  return m;
}

inline std::pair<Matrix, BaselineCache> baseline_forward(const BaselineNet& net, const Matrix& x,
                                                         Mode mode, Rng& rng) {
  net.validate();
  if (x.cols() != net.input_dim)
    throw ShapeError("baseline_forward: input has " + std::to_string(x.cols()) +
                     " columns, network expects " + std::to_string(net.input_dim));
  BaselineCache cache;
  const Matrix* h = &x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix z = affine(*h, net.layers[l].weights, net.layers[l].bias);
    Matrix a = z;
    for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    if (mode == Mode::Train && net.dropout_rate > 0.0) {
      Matrix mask = dropout_mask(rng, a.rows(), a.cols(), net.dropout_rate);
      for (std::size_t i = 0; i < a.size(); ++i) a[i] *= mask[i];
      cache.masks.push_back(std::move(mask));
    }
    detail::require_finite(a, "layer " + std::to_string(l) + " activations");
    cache.preacts.push_back(std::move(z));
    cache.acts.push_back(std::move(a));
    h = &cache.acts.back();
  }
  Matrix logits = affine(*h, net.head_weights, net.head_bias);
  detail::require_finite(logits, "head logits");
  return {std::move(logits), std::move(cache)};
}

inline Matrix baseline_predict(const BaselineNet& net, const Matrix& x) {
  Rng unused(0);
  return baseline_forward(net, x, Mode::Eval, unused).first;
}

// Per-sample d(target)/dx by reverse accumulation through the eval-mode net.
// Row b is the gradient for sample b.
inline Matrix baseline_input_gradients(const BaselineNet& net, const Matrix& x,
                                       std::span<const int> labels,
                                       SensitivityTarget target = SensitivityTarget::CrossEntropy) {
  Rng unused(0);
  auto [logits, cache] = baseline_forward(net, x, Mode::Eval, unused);
  Matrix g = matmul(target_logit_grad(logits, labels, target), net.head_weights);
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Matrix& z = cache.preacts[l];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(z[i] > 0.0)) g[i] = 0.0;
    g = matmul(g, net.layers[l].weights);
  }
  return g;
}

inline std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) s += v * v;
    out[i] = std::sqrt(s);
  }
  return out;
}

inline std::vector<double> baseline_input_grads(const BaselineNet& net, const Matrix& x,
                                                std::span<const int> labels,
                                                SensitivityTarget target = SensitivityTarget::CrossEntropy) {
  return row_norms(baseline_input_gradients(net, x, labels, target));
}

// Dual stream through the ReLU net with the subgradient 1[z > 0] (0 at z = 0).
// Eval mode: dropout is not applied.
inline std::pair<Matrix, DualState> baseline_forward_dual(const BaselineNet& net, const Matrix& x) {
  Rng unused(0);
  auto [logits, cache] = baseline_forward(net, x, Mode::Eval, unused);
  const std::size_t batch = x.rows();
  const std::size_t d = net.input_dim;
  DualState dual;
  dual.batch = batch;
  dual.input_dim = d;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Matrix& w = net.layers[l].weights;
    const std::size_t width = w.rows();
    Matrix s = l == 0 ? Matrix(batch * width, d)
                      : detail::blockwise_left_matmul(w, dual.jacobians.back(), batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < width; ++i) {
        auto srow = s.row(b * width + i);
        const bool on = cache.preacts[l](b, i) > 0.0;
        if (l == 0) {
          for (std::size_t k = 0; k < d; ++k) srow[k] = on ? w(i, k) : 0.0;
        } else if (!on) {
          for (double& v : srow) v = 0.0;
        }
      }
    }
    dual.jacobians.push_back(std::move(s));
  }
  dual.preacts = std::move(cache.preacts);
  dual.acts = std::move(cache.acts);
  dual.head_jacobian = detail::blockwise_left_matmul(net.head_weights, dual.jacobians.back(), batch);
  return {std::move(logits), std::move(dual)};
}

struct PolyArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;
  std::size_t num_classes = 0;
};

inline std::size_t poly_parameter_count(const PolyArchitecture& a) {
  std::size_t n = 0, prev = a.input_dim;
  for (std::size_t w : a.widths) {
    n += w * prev + w + 4 * w;
    prev = w;
  }
  return n + a.num_classes * prev + a.num_classes;
}

inline std::size_t baseline_parameter_count(std::size_t input_dim, const std::vector<std::size_t>& widths,
                                            std::size_t num_classes) {
  std::size_t n = 0, prev = input_dim;
  for (std::size_t w : widths) {
    n += w * prev + w;
    prev = w;
  }
  return n + num_classes * prev + num_classes;
}

struct CapacityMatch {
  std::vector<std::size_t> widths;
  std::size_t poly_params = 0;
  std::size_t baseline_params = 0;
  double relative_gap = 0.0;  // (baseline - poly) / poly
  bool within_tolerance = false;
  std::string note;  // set when the 5% band cannot be met
};

inline constexpr double kCapacityTolerance = 0.05;

// Scales every poly width by a common factor and keeps the baseline whose
// parameter count is closest to the polynomial model's.
inline CapacityMatch matched_capacity(const PolyArchitecture& poly) {
  if (poly.input_dim == 0 || poly.num_classes == 0 || poly.widths.empty())
    throw ArgumentError("matched_capacity: invalid polynomial architecture");
  for (std::size_t w : poly.widths)
    if (w == 0) throw ArgumentError("matched_capacity: zero width layer");

  CapacityMatch best;
  best.poly_params = poly_parameter_count(poly);
  const double target = static_cast<double>(best.poly_params);
  double best_gap = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 3000; ++step) {
    const double scale = 0.5 + 0.001 * step;
    std::vector<std::size_t> widths;
    for (std::size_t w : poly.widths)
      widths.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(scale * static_cast<double>(w)))));
    const std::size_t n = baseline_parameter_count(poly.input_dim, widths, poly.num_classes);
    const double gap = (static_cast<double>(n) - target) / target;
    if (std::abs(gap) < std::abs(best_gap)) {
      best_gap = gap;
      best.widths = widths;
      best.baseline_params = n;
    }
  }
  best.relative_gap = best_gap;
  best.within_tolerance = std::abs(best_gap) <= kCapacityTolerance;
  if (!best.within_tolerance) {
    best.note = "capacity mismatch: baseline has " + std::to_string(best.baseline_params) +
                " parameters vs " + std::to_string(best.poly_params) + " (" +
                std::to_string(100.0 * best_gap) + "%), proceeding with nearest widths";
  }
  return best;
}

}  // namespace chainz
