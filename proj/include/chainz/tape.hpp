#pragma once

// Minimal reverse-mode tape over whole-matrix primitives.
//
// Every node keeps its forward value, a forward closure (so the whole tape
// can be replayed from its leaves) and a backward closure that accumulates
// into the gradients of its inputs. Nodes are appended in evaluation order,
// so a reverse sweep over the node list is a valid topological order.
//
// Per-sample Jacobians are "stacked": a (batch, width, d) block is stored as a
// (batch * width) x d matrix, sample b occupying rows [b*width, (b+1)*width).

#include <cstddef>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chainz/linalg.hpp"
#include "chainz/loss.hpp"

namespace chainz {

class GradTape {
 public:
  using Id = std::size_t;

  using ForwardFn = std::function<Matrix(std::span<const Matrix* const>)>;
  // (output grad, output value, input values, input grads or nullptr)
  using BackwardFn = std::function<void(const Matrix&, const Matrix&, std::span<const Matrix* const>,
                                        std::span<Matrix* const>)>;

  Id parameter(std::string name, const Matrix& value) {
    if (!registry_names_.insert(name).second)
      throw ArgumentError("GradTape: parameter '" + name + "' registered twice");
    const Id id = push_leaf("param:" + name, value, true);
    registry_.emplace_back(std::move(name), id);
    return id;
  }

  Id constant(Matrix value) { return push_leaf("const", std::move(value), false); }

  // op(a) op(b)
  Id matmul(Id a, Id b, Trans ta = Trans::No, Trans tb = Trans::No) {
    return push_op(
        "matmul", {a, b},
        [ta, tb](auto in) { return chainz::matmul(*in[0], *in[1], ta, tb); },
        [ta, tb](const Matrix& g, const Matrix&, auto in, auto out) {
          // C = op(A) op(B): dop(A) = G op(B)^T, dop(B) = op(A)^T G.
          if (out[0]) {
            Matrix ga = ta == Trans::No ? chainz::matmul(g, *in[1], Trans::No, flip(tb))
                                        : chainz::matmul(*in[1], g, tb, Trans::Yes);
            *out[0] += ga;
          }
          if (out[1]) {
            Matrix gb = tb == Trans::No ? chainz::matmul(*in[0], g, flip(ta), Trans::No)
                                        : chainz::matmul(g, *in[0], Trans::Yes, ta);
            *out[1] += gb;
          }
        });
  }

  // x + 1 bias, bias is 1 x cols.
  Id add_bias(Id x, Id bias) {
    require(value(bias).rows() == 1 && value(bias).cols() == value(x).cols(), "add_bias: bias shape");
    return push_op(
        "add_bias", {x, bias},
        [](auto in) {
          Matrix out = *in[0];
          for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += (*in[1])[j];
          return out;
        },
        [](const Matrix& g, const Matrix&, auto, auto out) {
          if (out[0]) *out[0] += g;
          if (out[1])
            for (std::size_t i = 0; i < g.rows(); ++i)
              for (std::size_t j = 0; j < g.cols(); ++j) (*out[1])[j] += g(i, j);
        });
  }

  // Elementwise c0 + c1 z + c2 z^2 + c3 z^3 with per-column 1 x w coefficients.
  Id poly(Id z, Id c0, Id c1, Id c2, Id c3) {
    check_coeffs(z, {c0, c1, c2, c3});
    return push_op(
        "poly", {z, c0, c1, c2, c3},
        [](auto in) {
          const Matrix& zz = *in[0];
          Matrix out(zz.rows(), zz.cols());
          for (std::size_t i = 0; i < zz.rows(); ++i)
            for (std::size_t j = 0; j < zz.cols(); ++j) {
              const double v = zz(i, j);
              out(i, j) = (*in[1])[j] + v * ((*in[2])[j] + v * ((*in[3])[j] + v * (*in[4])[j]));
            }
          return out;
        },
        [](const Matrix& g, const Matrix&, auto in, auto out) {
          const Matrix& zz = *in[0];
          for (std::size_t i = 0; i < zz.rows(); ++i)
            for (std::size_t j = 0; j < zz.cols(); ++j) {
              const double v = zz(i, j), gi = g(i, j);
              if (out[0])
                (*out[0])(i, j) += gi * ((*in[2])[j] + v * (2.0 * (*in[3])[j] + 3.0 * v * (*in[4])[j]));
              if (out[1]) (*out[1])[j] += gi;
              if (out[2]) (*out[2])[j] += gi * v;
              if (out[3]) (*out[3])[j] += gi * v * v;
              if (out[4]) (*out[4])[j] += gi * v * v * v;
            }
        });
  }

  // Elementwise phi'(z) = c1 + 2 c2 z + 3 c3 z^2; its z-gradient carries phi''.
  Id poly_slope(Id z, Id c1, Id c2, Id c3) {
    check_coeffs(z, {c1, c2, c3});
    return push_op(
        "poly_slope", {z, c1, c2, c3},
        [](auto in) {
          const Matrix& zz = *in[0];
          Matrix out(zz.rows(), zz.cols());
          for (std::size_t i = 0; i < zz.rows(); ++i)
            for (std::size_t j = 0; j < zz.cols(); ++j) {
              const double v = zz(i, j);
              out(i, j) = (*in[1])[j] + v * (2.0 * (*in[2])[j] + 3.0 * v * (*in[3])[j]);
            }
          return out;
        },
        [](const Matrix& g, const Matrix&, auto in, auto out) {
          const Matrix& zz = *in[0];
          for (std::size_t i = 0; i < zz.rows(); ++i)
            for (std::size_t j = 0; j < zz.cols(); ++j) {
              const double v = zz(i, j), gi = g(i, j);
              if (out[0]) (*out[0])(i, j) += gi * (2.0 * (*in[2])[j] + 6.0 * (*in[3])[j] * v);
              if (out[1]) (*out[1])[j] += gi;
              if (out[2]) (*out[2])[j] += gi * 2.0 * v;
              if (out[3]) (*out[3])[j] += gi * 3.0 * v * v;
            }
        });
  }

  Id relu(Id z) {
    return push_op(
        "relu", {z},
        [](auto in) {
          Matrix out = *in[0];
          for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
          return out;
        },
        [](const Matrix& g, const Matrix&, auto in, auto out) {
          if (!out[0]) return;
          for (std::size_t i = 0; i < g.size(); ++i)
            if ((*in[0])[i] > 0.0) (*out[0])[i] += g[i];
        });
  }

  // 1[z > 0]; piecewise constant, so it passes no gradient back to z.
  Id relu_slope(Id z) {
    return push_op(
        "relu_slope", {z},
        [](auto in) {
          Matrix out = *in[0];
          for (double& v : out.data()) v = v > 0.0 ? 1.0 : 0.0;
          return out;
        },
        [](const Matrix&, const Matrix&, auto, auto) {});
  }

  // Elementwise product of equal-shaped matrices.
  Id mul(Id a, Id b) {
    require(value(a).same_shape(value(b)), "mul: shape mismatch");
    return push_op(
        "mul", {a, b},
        [](auto in) {
          Matrix out = *in[0];
          for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
          return out;
        },
        [](const Matrix& g, const Matrix&, auto in, auto out) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (out[0]) (*out[0])[i] += g[i] * (*in[1])[i];
            if (out[1]) (*out[1])[i] += g[i] * (*in[0])[i];
          }
        });
  }

  // Per-sample diag(slope_b) M_b. `slope` is batch x w. `m` is either a shared
  // w x d matrix (M_b = m for every b) or a stacked (batch*w) x d matrix.
  // The output is always stacked.
  Id diag_scale(Id slope, Id m) {
    const std::size_t batch = value(slope).rows(), w = value(slope).cols();
    const bool shared = value(m).rows() == w;
    require(shared || value(m).rows() == batch * w, "diag_scale: matrix rows do not match slope");
    return push_op(
        "diag_scale", {slope, m},
        [batch, w, shared](auto in) {
          const Matrix& s = *in[0];
          const Matrix& mm = *in[1];
          Matrix out(batch * w, mm.cols());
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < w; ++i) {
              const auto src = mm.row(shared ? i : b * w + i);
              auto dst = out.row(b * w + i);
              for (std::size_t k = 0; k < src.size(); ++k) dst[k] = s(b, i) * src[k];
            }
          return out;
        },
        [batch, w, shared](const Matrix& g, const Matrix&, auto in, auto out) {
          const Matrix& s = *in[0];
          const Matrix& mm = *in[1];
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < w; ++i) {
              const std::size_t mr = shared ? i : b * w + i;
              const auto grow = g.row(b * w + i);
              const auto src = mm.row(mr);
              if (out[0]) {
                double acc = 0.0;
                for (std::size_t k = 0; k < src.size(); ++k) acc += grow[k] * src[k];
                (*out[0])(b, i) += acc;
              }
              if (out[1]) {
                auto dst = out[1]->row(mr);
                for (std::size_t k = 0; k < src.size(); ++k) dst[k] += s(b, i) * grow[k];
              }
            }
        });
  }

  // Per-sample W S_b over a stacked S: (batch*in) x d -> (batch*out) x d.
  Id block_matmul(Id weights, Id stacked) {
    const std::size_t in_w = value(weights).cols();
    require(value(stacked).rows() % in_w == 0, "block_matmul: stacked rows not a multiple of width");
    const std::size_t batch = value(stacked).rows() / in_w;
    return push_op(
        "block_matmul", {weights, stacked},
        [batch](auto in) {
          const Matrix& w = *in[0];
          const Matrix& s = *in[1];
          const std::size_t iw = w.cols(), ow = w.rows(), d = s.cols();
          Matrix out(batch * ow, d);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < ow; ++i) {
              double* orow = out.row(b * ow + i).data();
              for (std::size_t p = 0; p < iw; ++p) {
                const double wv = w(i, p);
                const double* srow = s.row(b * iw + p).data();
                for (std::size_t k = 0; k < d; ++k) orow[k] += wv * srow[k];
              }
            }
          return out;
        },
        [batch](const Matrix& g, const Matrix&, auto in, auto out) {
          const Matrix& w = *in[0];
          const Matrix& s = *in[1];
          const std::size_t iw = w.cols(), ow = w.rows(), d = s.cols();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < ow; ++i) {
              const double* grow = g.row(b * ow + i).data();
              for (std::size_t p = 0; p < iw; ++p) {
                const double* srow = s.row(b * iw + p).data();
                if (out[0]) {
                  double acc = 0.0;
                  for (std::size_t k = 0; k < d; ++k) acc += grow[k] * srow[k];
                  (*out[0])(i, p) += acc;
                }
                if (out[1]) {
                  const double wv = w(i, p);
                  double* dst = out[1]->row(b * iw + p).data();
                  for (std::size_t k = 0; k < d; ++k) dst[k] += wv * grow[k];
                }
              }
            }
        });
  }

  // 1x1 sum of squares.
  Id frobenius_sq(Id m) {
    return push_op(
        "frobenius_sq", {m}, [](auto in) { return Matrix(1, 1, chainz::frobenius_sq(*in[0])); },
        [](const Matrix& g, const Matrix&, auto in, auto out) {
          if (!out[0]) return;
          const double s = 2.0 * g[0];
          for (std::size_t i = 0; i < in[0]->size(); ++i) (*out[0])[i] += s * (*in[0])[i];
        });
  }

  // 1x1 mean softmax cross-entropy.
  Id softmax_cross_entropy(Id logits, Labels labels) {
    check_labels(labels, value(logits).rows(), value(logits).cols());
    return push_op(
        "softmax_cross_entropy", {logits},
        [labels](auto in) { return Matrix(1, 1, mean_cross_entropy(*in[0], labels)); },
        [labels](const Matrix& g, const Matrix&, auto in, auto out) {
          if (!out[0]) return;
          Matrix p = softmax_rows(*in[0]);
          const double scale = g[0] / static_cast<double>(p.rows());
          for (std::size_t i = 0; i < p.rows(); ++i) {
            p(i, static_cast<std::size_t>(labels[i])) -= 1.0;
            for (std::size_t j = 0; j < p.cols(); ++j) (*out[0])(i, j) += scale * p(i, j);
          }
        });
  }

  // 1x1 sum_k coef_k x_k over 1x1 inputs.
  Id scalar_combine(const std::vector<std::pair<double, Id>>& terms) {
    std::vector<Id> ids;
    std::vector<double> coefs;
    for (const auto& [c, id] : terms) {
      require(value(id).rows() == 1 && value(id).cols() == 1, "scalar_combine: inputs must be 1x1");
      ids.push_back(id);
      coefs.push_back(c);
    }
    return push_op(
        "scalar_combine", ids,
        [coefs](auto in) {
          double s = 0.0;
          for (std::size_t k = 0; k < coefs.size(); ++k) s += coefs[k] * (*in[k])[0];
          return Matrix(1, 1, s);
        },
        [coefs](const Matrix& g, const Matrix&, auto, auto out) {
          for (std::size_t k = 0; k < coefs.size(); ++k)
            if (out[k] && coefs[k] != 0.0) (*out[k])[0] += coefs[k] * g[0];
        });
  }

  const Matrix& value(Id id) const { return nodes_.at(id).value; }
  const Matrix& grad(Id id) const { return nodes_.at(id).grad; }
  const std::string& op_name(Id id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  const std::vector<std::pair<std::string, Id>>& registry() const { return registry_; }

  // Reverse sweep from a 1x1 root. Nodes no gradient reaches are skipped.
  void backward(Id root) {
    require(value(root).rows() == 1 && value(root).cols() == 1, "backward: root must be 1x1");
    for (auto& n : nodes_) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
      n.touched = false;
    }
    nodes_[root].grad[0] = 1.0;
    nodes_[root].touched = true;
    std::vector<const Matrix*> in_vals;
    std::vector<Matrix*> in_grads;
    for (Id id = root + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.touched || !n.requires_grad || !n.backward) continue;
      in_vals.clear();
      in_grads.clear();
      for (Id src : n.inputs) {
        in_vals.push_back(&nodes_[src].value);
        Node& s = nodes_[src];
        if (s.requires_grad) {
          s.touched = true;
          in_grads.push_back(&s.grad);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      n.backward(n.grad, n.value, in_vals, in_grads);
    }
  }

  // Recomputes every op node from the current leaf values and returns the
  // fresh value of `root`. Stored values are left untouched.
  Matrix replay(Id root) const {
    std::vector<Matrix> fresh(nodes_.size());
    std::vector<const Matrix*> in_vals;
    for (Id id = 0; id <= root; ++id) {
      const Node& n = nodes_[id];
      if (!n.forward) {
        fresh[id] = n.value;
        continue;
      }
      in_vals.clear();
      for (Id src : n.inputs) in_vals.push_back(&fresh[src]);
      fresh[id] = n.forward(in_vals);
    }
    return fresh[root];
  }

 private:
  struct Node {
    std::string op;
    std::vector<Id> inputs;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool touched = false;
    ForwardFn forward;
    BackwardFn backward;
  };

  static Trans flip(Trans t) { return t == Trans::No ? Trans::Yes : Trans::No; }

  static void require(bool ok, const char* msg) {
    if (!ok) throw ShapeError(std::string("GradTape::") + msg);
  }

  void check_coeffs(Id z, std::initializer_list<Id> coeffs) const {
    for (Id c : coeffs)
      require(value(c).rows() == 1 && value(c).cols() == value(z).cols(), "coefficient width mismatch");
  }

  Id push_leaf(std::string op, Matrix value, bool requires_grad) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  Id push_op(std::string op, std::vector<Id> inputs, ForwardFn fwd, BackwardFn bwd) {
    std::vector<const Matrix*> in_vals;
    bool needs = false;
    for (Id src : inputs) {
      if (src >= nodes_.size()) throw ArgumentError("GradTape: unknown node id");
      in_vals.push_back(&nodes_[src].value);
      needs = needs || nodes_[src].requires_grad;
    }
    Node n;
    n.op = std::move(op);
    n.value = fwd(in_vals);
    n.inputs = std::move(inputs);
    n.requires_grad = needs;
    n.forward = std::move(fwd);
    n.backward = std::move(bwd);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, Id>> registry_;
  std::set<std::string> registry_names_;
};

}  // namespace chainz
