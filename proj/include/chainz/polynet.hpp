#pragma once

// Networks whose hidden units apply a learnable cubic
//   phi(z) = c0 + c1 z + c2 z^2 + c3 z^3
// per neuron, and the dual-stream forward pass that carries the cumulative
// input Jacobian S^(l) = d h^(l) / d x alongside the activations.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "chainz/linalg.hpp"

namespace chainz {

// Per-neuron cubic coefficients, each stored as a 1 x width row.
struct ActivationCoeffs {
  Matrix c0, c1, c2, c3;

  ActivationCoeffs() = default;

  explicit ActivationCoeffs(std::size_t width)
      : c0(1, width), c1(1, width, 1.0), c2(1, width), c3(1, width) {}

  // Same four values for every neuron.
  static ActivationCoeffs uniform(std::size_t width, double a0, double a1, double a2,
                                  double a3) {
    ActivationCoeffs c;
    c.c0 = Matrix(1, width, a0);
    c.c1 = Matrix(1, width, a1);
    c.c2 = Matrix(1, width, a2);
    c.c3 = Matrix(1, width, a3);
    return c;
  }

  std::size_t width() const { return c0.cols(); }

  void validate() const {
    const std::size_t w = c0.cols();
    for (const Matrix* m : {&c0, &c1, &c2, &c3}) {
      if (m->rows() != 1 || m->cols() != w)
        throw ShapeError("ActivationCoeffs: coefficient rows must share one width");
    }
  }

  double value(std::size_t j, double z) const {
    return c0[j] + z * (c1[j] + z * (c2[j] + z * c3[j]));
  }
  double d1(std::size_t j, double z) const { return c1[j] + z * (2.0 * c2[j] + 3.0 * z * c3[j]); }
  double d2(std::size_t j, double z) const { return 2.0 * c2[j] + 6.0 * c3[j] * z; }
};

struct PolyLayer {
  Matrix weights;  // out x in
  Matrix bias;     // 1 x out
  ActivationCoeffs coeffs;

  std::size_t in_width() const { return weights.cols(); }
  std::size_t out_width() const { return weights.rows(); }
};

struct PolyNetwork {
  std::size_t input_dim = 0;
  std::vector<PolyLayer> layers;
  Matrix head_weights;  // classes x last width
  Matrix head_bias;     // 1 x classes

  std::size_t num_classes() const { return head_weights.rows(); }
  std::size_t depth() const { return layers.size(); }

  void validate() const {
    if (layers.empty()) throw ShapeError("PolyNetwork: at least one layer required");
    std::size_t prev = input_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const PolyLayer& layer = layers[l];
      if (layer.weights.cols() != prev)
        throw ShapeError("PolyNetwork: layer " + std::to_string(l) + " expects input width " +
                         std::to_string(layer.weights.cols()) + ", got " + std::to_string(prev));
      if (layer.bias.rows() != 1 || layer.bias.cols() != layer.out_width())
        throw ShapeError("PolyNetwork: layer " + std::to_string(l) + " bias shape");
      layer.coeffs.validate();
      if (layer.coeffs.width() != layer.out_width())
        throw ShapeError("PolyNetwork: layer " + std::to_string(l) + " coefficient width");
      prev = layer.out_width();
    }
    if (head_weights.cols() != prev || head_weights.rows() == 0)
      throw ShapeError("PolyNetwork: head does not conform to last layer");
    if (head_bias.rows() != 1 || head_bias.cols() != head_weights.rows())
      throw ShapeError("PolyNetwork: head bias shape");
  }

  std::size_t parameter_count() const {
    std::size_t n = head_weights.size() + head_bias.size();
    for (const auto& l : layers) n += l.weights.size() + l.bias.size() + 4 * l.out_width();
    return n;
  }
};

// Named, mutable view of every trainable tensor, in a fixed order.
using ParamList = std::vector<std::pair<std::string, Matrix*>>;

inline ParamList parameters(PolyNetwork& net) {
  ParamList out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "weights", &layer.weights);
    out.emplace_back(p + "bias", &layer.bias);
    out.emplace_back(p + "c0", &layer.coeffs.c0);
    out.emplace_back(p + "c1", &layer.coeffs.c1);
    out.emplace_back(p + "c2", &layer.coeffs.c2);
    out.emplace_back(p + "c3", &layer.coeffs.c3);
  }
  out.emplace_back("head.weights", &net.head_weights);
  out.emplace_back("head.bias", &net.head_bias);
  return out;
}

struct PolyInit {
  double coeff_noise = 0.01;  // std of the noise on c2, c3
};

// Weights ~ N(0, 1/fan_in), zero biases, near-identity activations.
inline PolyNetwork make_poly_network(std::size_t input_dim, const std::vector<std::size_t>& widths,
                                     std::size_t num_classes, Rng& rng, PolyInit init = {}) {
  if (input_dim == 0 || num_classes == 0 || widths.empty())
    throw ShapeError("make_poly_network: degenerate architecture");
  PolyNetwork net;
  net.input_dim = input_dim;
  std::size_t prev = input_dim;
  for (std::size_t w : widths) {
    if (w == 0) throw ShapeError("make_poly_network: zero width layer");
    PolyLayer layer;
    layer.weights = gauss_init(rng, w, prev, 1.0 / std::sqrt(static_cast<double>(prev)));
    layer.bias = Matrix(1, w);
    layer.coeffs = ActivationCoeffs(w);
    for (std::size_t j = 0; j < w; ++j) {
      layer.coeffs.c2[j] = init.coeff_noise * rng.normal();
      layer.coeffs.c3[j] = init.coeff_noise * rng.normal();
    }
    net.layers.push_back(std::move(layer));
    prev = w;
  }
  net.head_weights = gauss_init(rng, num_classes, prev, 1.0 / std::sqrt(static_cast<double>(prev)));
  net.head_bias = Matrix(1, num_classes);
  return net;
}

inline Matrix poly_eval(const ActivationCoeffs& coeffs, const Matrix& z) {
  if (z.cols() != coeffs.width())
    throw ShapeError("poly_eval: " + std::to_string(z.cols()) + " columns vs " +
                     std::to_string(coeffs.width()) + " coefficients");
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = coeffs.value(j, z(i, j));
  return out;
}

inline Matrix poly_deriv(const ActivationCoeffs& coeffs, const Matrix& z, int order) {
  if (z.cols() != coeffs.width())
    throw ShapeError("poly_deriv: " + std::to_string(z.cols()) + " columns vs " +
                     std::to_string(coeffs.width()) + " coefficients");
  if (order != 1 && order != 2) throw ArgumentError("poly_deriv: order must be 1 or 2");
  Matrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j)
      out(i, j) = order == 1 ? coeffs.d1(j, z(i, j)) : coeffs.d2(j, z(i, j));
  return out;
}

// z = x W^T + 1 b
inline Matrix affine(const Matrix& x, const Matrix& weights, const Matrix& bias) {
  Matrix z = matmul(x, weights, Trans::No, Trans::Yes);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += bias[j];
  return z;
}

struct ValueCache {
  std::vector<Matrix> preacts;  // z^(l), batch x width_l
  std::vector<Matrix> acts;     // h^(l), batch x width_l
};

struct DualState {
  std::size_t batch = 0;
  std::size_t input_dim = 0;
  std::vector<Matrix> preacts;
  std::vector<Matrix> acts;
  // jacobians[l] stacks the per-sample S^(l): rows [b*width_l, (b+1)*width_l)
  // hold sample b, i.e. a (batch, width_l, d) block.
  std::vector<Matrix> jacobians;
  Matrix head_jacobian;  // (batch * classes) x d, same stacking

  std::size_t depth() const { return jacobians.size(); }

  Matrix sample_jacobian(std::size_t layer, std::size_t b) const {
    const Matrix& s = jacobians.at(layer);
    const std::size_t w = s.rows() / batch;
    Matrix out(w, input_dim);
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t k = 0; k < input_dim; ++k) out(i, k) = s(b * w + i, k);
    return out;
  }

  Matrix sample_head_jacobian(std::size_t b) const {
    const std::size_t c = head_jacobian.rows() / batch;
    Matrix out(c, input_dim);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t k = 0; k < input_dim; ++k) out(i, k) = head_jacobian(b * c + i, k);
    return out;
  }
};

namespace detail {

inline void require_finite(const Matrix& m, const std::string& where) {
  if (!m.all_finite()) throw NumericOverflowError("non-finite values in " + where);
}

inline void check_input(const PolyNetwork& net, const Matrix& x) {
  net.validate();
  if (x.cols() != net.input_dim)
    throw ShapeError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(net.input_dim));
  if (x.rows() == 0) throw ShapeError("forward: empty batch");
}

// out_b = W * s_b for every sample block of the stacked s.
inline Matrix blockwise_left_matmul(const Matrix& w, const Matrix& stacked, std::size_t batch) {
  const std::size_t in_w = w.cols();
  const std::size_t out_w = w.rows();
  const std::size_t d = stacked.cols();
  Matrix out(batch * out_w, d);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < out_w; ++i) {
      double* orow = out.row(b * out_w + i).data();
      for (std::size_t p = 0; p < in_w; ++p) {
        const double wv = w(i, p);
        if (wv == 0.0) continue;
        const double* srow = stacked.row(b * in_w + p).data();
        for (std::size_t k = 0; k < d; ++k) orow[k] += wv * srow[k];
      }
    }
  }
  return out;
}

}  // namespace detail

inline std::pair<Matrix, ValueCache> forward_values(const PolyNetwork& net, const Matrix& x) {
  detail::check_input(net, x);
  ValueCache cache;
  const Matrix* h = &x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const PolyLayer& layer = net.layers[l];
    Matrix z = affine(*h, layer.weights, layer.bias);
    Matrix a = poly_eval(layer.coeffs, z);
    detail::require_finite(a, "layer " + std::to_string(l) + " activations");
    cache.preacts.push_back(std::move(z));
    cache.acts.push_back(std::move(a));
    h = &cache.acts.back();
  }
  Matrix logits = affine(*h, net.head_weights, net.head_bias);
  detail::require_finite(logits, "head logits");
  return {std::move(logits), std::move(cache)};
}

struct DualOptions {
  // Cap on the bytes held by the stacked Jacobians of one forward_dual call.
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
};

inline std::size_t dual_memory_bytes(const PolyNetwork& net, std::size_t batch) {
  std::size_t rows = net.num_classes();
  for (const auto& l : net.layers) rows += l.out_width();
  return batch * rows * net.input_dim * sizeof(double);
}

inline std::pair<Matrix, DualState> forward_dual(const PolyNetwork& net, const Matrix& x,
                                                 DualOptions opts = {}) {
  detail::check_input(net, x);
  const std::size_t batch = x.rows();
  const std::size_t d = net.input_dim;
  if (dual_memory_bytes(net, batch) > opts.memory_budget_bytes)
    throw ArgumentError("forward_dual: Jacobian storage of " +
                        std::to_string(dual_memory_bytes(net, batch)) +
                        " bytes exceeds the memory budget of " +
                        std::to_string(opts.memory_budget_bytes));

  DualState dual;
  dual.batch = batch;
  dual.input_dim = d;
  const Matrix* h = &x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const PolyLayer& layer = net.layers[l];
    const std::size_t w = layer.out_width();
    Matrix z = affine(*h, layer.weights, layer.bias);
    Matrix a = poly_eval(layer.coeffs, z);
    detail::require_finite(a, "layer " + std::to_string(l) + " activations");
    const Matrix slope = poly_deriv(layer.coeffs, z, 1);

    // S^(1) = diag(phi') W^(1);  S^(l) = diag(phi') W^(l) S^(l-1).
    Matrix s = l == 0 ? Matrix(batch * w, d)
                      : detail::blockwise_left_matmul(layer.weights, dual.jacobians.back(), batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < w; ++i) {
        auto srow = s.row(b * w + i);
        const double g = slope(b, i);
        if (l == 0) {
          const auto wrow = layer.weights.row(i);
          for (std::size_t k = 0; k < d; ++k) srow[k] = g * wrow[k];
        } else {
          for (double& v : srow) v *= g;
        }
      }
    }
    detail::require_finite(s, "layer " + std::to_string(l) + " Jacobian");
    dual.preacts.push_back(std::move(z));
    dual.acts.push_back(std::move(a));
    dual.jacobians.push_back(std::move(s));
    h = &dual.acts.back();
  }
  Matrix logits = affine(*h, net.head_weights, net.head_bias);
  detail::require_finite(logits, "head logits");
  dual.head_jacobian = detail::blockwise_left_matmul(net.head_weights, dual.jacobians.back(), batch);
  return {std::move(logits), std::move(dual)};
}

// Index `depth` selects the head Jacobian.
inline std::vector<std::size_t> hidden_layer_indices(std::size_t depth) {
  std::vector<std::size_t> idx(depth);
  for (std::size_t l = 0; l < depth; ++l) idx[l] = l;
  return idx;
}

// (1 / (B |set|)) sum_b sum_{l in set} ||S^(l)_b||_F^2
inline double dreg_penalty(const DualState& dual, const std::vector<std::size_t>& include_layers) {
  if (include_layers.empty()) throw ArgumentError("dreg_penalty: empty layer set");
  double total = 0.0;
  for (std::size_t l : include_layers) {
    if (l == dual.depth()) {
      total += frobenius_sq(dual.head_jacobian);
    } else if (l < dual.depth()) {
      total += frobenius_sq(dual.jacobians[l]);
    } else {
      throw ArgumentError("dreg_penalty: layer index " + std::to_string(l) + " out of range");
    }
  }
  return total / (static_cast<double>(dual.batch) * static_cast<double>(include_layers.size()));
}

}  // namespace chainz
