#pragma once

// Composite objective (mean cross-entropy + lambda * DREG penalty), its exact
// parameter gradients via GradTape, the SGD/Adam update rules and the
// fixed-epoch training loop shared by the polynomial net and the baselines.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "chainz/baselines.hpp"
#include "chainz/linalg.hpp"
#include "chainz/loss.hpp"
#include "chainz/polynet.hpp"
#include "chainz/tape.hpp"

namespace chainz {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  double lambda_dreg = 0.1;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double dropout_rate = 0.0;  // baselines only
  bool penalize_head = false;  // add the head Jacobian to the DREG layer set
  std::size_t patience = 0;    // early stopping on eval accuracy; 0 = off
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda_dreg >= 0.0) || !std::isfinite(lambda_dreg))
      throw ArgumentError("TrainConfig: lambda_dreg must be a finite nonnegative number");
    if (!(learning_rate > 0.0)) throw ArgumentError("TrainConfig: learning_rate must be positive");
    if (batch_size == 0) throw ArgumentError("TrainConfig: batch_size must be positive");
    if (epochs == 0) throw ArgumentError("TrainConfig: epochs must be positive");
    if (!(weight_decay >= 0.0)) throw ArgumentError("TrainConfig: weight_decay must be nonnegative");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw ArgumentError("TrainConfig: dropout_rate outside [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
      throw ArgumentError("TrainConfig: invalid Adam hyperparameters");
  }
};

// Training aborted on a non-finite loss or activation.
class TrainingDiverged : public NumericOverflowError {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, const std::string& cause)
      : NumericOverflowError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ": " + cause),
        epoch_(epoch),
        batch_(batch),
        cause_(cause) {}

  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }
  const std::string& cause() const { return cause_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
  std::string cause_;
};

struct ObjectiveNodes {
  GradTape::Id loss = 0;
  GradTape::Id task = 0;
  std::optional<GradTape::Id> penalty;
  std::vector<GradTape::Id> params;  // parallel to parameters(net)
};

namespace detail {

inline std::vector<GradTape::Id> register_params(GradTape& tape, const ParamList& params) {
  std::vector<GradTape::Id> ids;
  for (const auto& [name, m] : params) ids.push_back(tape.parameter(name, *m));
  return ids;
}

inline ObjectiveNodes finish_objective(GradTape& tape, GradTape::Id logits, const Labels& labels,
                                       const std::vector<GradTape::Id>& jacobians, std::size_t batch,
                                       double lambda, std::vector<GradTape::Id> params) {
  ObjectiveNodes out;
  out.params = std::move(params);
  out.task = tape.softmax_cross_entropy(logits, labels);
  if (jacobians.empty()) {
    out.loss = tape.scalar_combine({{1.0, out.task}});
    return out;
  }
  const double norm = 1.0 / (static_cast<double>(batch) * static_cast<double>(jacobians.size()));
  std::vector<std::pair<double, GradTape::Id>> terms;
  for (GradTape::Id s : jacobians) terms.emplace_back(norm, tape.frobenius_sq(s));
  out.penalty = tape.scalar_combine(terms);
  out.loss = tape.scalar_combine({{1.0, out.task}, {lambda, *out.penalty}});
  return out;
}

}  // namespace detail

// Records the objective of the polynomial net on `tape`. The dual stream is
// recorded whenever a penalty value is wanted, so lambda = 0 still reports it.
inline ObjectiveNodes record_objective(GradTape& tape, PolyNetwork& net, const Matrix& x,
                                       const Labels& labels, const TrainConfig& cfg) {
  detail::check_input(net, x);
  const auto params = detail::register_params(tape, parameters(net));
  const std::size_t batch = x.rows();
  GradTape::Id h = tape.constant(x);
  std::vector<GradTape::Id> jac;
  GradTape::Id s = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::size_t k = 6 * l;
    const GradTape::Id w = params[k], b = params[k + 1];
    const GradTape::Id z = tape.add_bias(tape.matmul(h, w, Trans::No, Trans::Yes), b);
    h = tape.poly(z, params[k + 2], params[k + 3], params[k + 4], params[k + 5]);
    if (!tape.value(h).all_finite())
      throw NumericOverflowError("non-finite values in layer " + std::to_string(l) + " activations");
    const GradTape::Id slope = tape.poly_slope(z, params[k + 3], params[k + 4], params[k + 5]);
    s = l == 0 ? tape.diag_scale(slope, w) : tape.diag_scale(slope, tape.block_matmul(w, s));
    jac.push_back(s);
  }
  const GradTape::Id hw = params[params.size() - 2], hb = params.back();
  const GradTape::Id logits = tape.add_bias(tape.matmul(h, hw, Trans::No, Trans::Yes), hb);
  if (!tape.value(logits).all_finite()) throw NumericOverflowError("non-finite values in head logits");
  if (cfg.penalize_head) jac.push_back(tape.block_matmul(hw, s));
  return detail::finish_objective(tape, logits, labels, jac, batch, cfg.lambda_dreg, params);
}

// Baseline objective. With lambda > 0 the ReLU dual stream (subgradient
// 1[z > 0]) is recorded and penalized, giving the relu_dreg variant.
// `dropout_rng` enables train-mode dropout when non-null.
inline ObjectiveNodes record_objective(GradTape& tape, BaselineNet& net, const Matrix& x,
                                       const Labels& labels, const TrainConfig& cfg,
                                       Rng* dropout_rng = nullptr) {
  net.validate();
  if (x.cols() != net.input_dim) throw ShapeError("record_objective: input width mismatch");
  const auto params = detail::register_params(tape, parameters(net));
  const std::size_t batch = x.rows();
  const bool dual = cfg.lambda_dreg > 0.0;
  GradTape::Id h = tape.constant(x);
  std::vector<GradTape::Id> jac;
  GradTape::Id s = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const GradTape::Id w = params[2 * l], b = params[2 * l + 1];
    const GradTape::Id z = tape.add_bias(tape.matmul(h, w, Trans::No, Trans::Yes), b);
    h = tape.relu(z);
    std::optional<GradTape::Id> mask;
    if (dropout_rng && net.dropout_rate > 0.0) {
      const Matrix& hv = tape.value(h);
      mask = tape.constant(dropout_mask(*dropout_rng, hv.rows(), hv.cols(), net.dropout_rate));
      h = tape.mul(h, *mask);
    }
    if (dual) {
      GradTape::Id slope = tape.relu_slope(z);
      if (mask) slope = tape.mul(slope, *mask);
      s = l == 0 ? tape.diag_scale(slope, w) : tape.diag_scale(slope, tape.block_matmul(w, s));
      jac.push_back(s);
    }
  }
  const GradTape::Id hw = params[params.size() - 2], hb = params.back();
  const GradTape::Id logits = tape.add_bias(tape.matmul(h, hw, Trans::No, Trans::Yes), hb);
  if (!tape.value(logits).all_finite()) throw NumericOverflowError("non-finite values in head logits");
  if (dual && cfg.penalize_head) jac.push_back(tape.block_matmul(hw, s));
  return detail::finish_objective(tape, logits, labels, jac, batch, cfg.lambda_dreg, params);
}

struct LossAndGrads {
  double loss = 0.0;
  double task_loss = 0.0;
  double penalty = 0.0;
  std::vector<Matrix> grads;  // parallel to parameters(net)
};

template <typename Net, typename... Extra>
LossAndGrads loss_and_grads(Net& net, const Matrix& x, const Labels& labels, const TrainConfig& cfg,
                            Extra&&... extra) {
  if (x.rows() == 0) throw ArgumentError("loss_and_grads: empty batch");
  GradTape tape;
  const ObjectiveNodes nodes = record_objective(tape, net, x, labels, cfg, std::forward<Extra>(extra)...);
  LossAndGrads out;
  out.loss = tape.value(nodes.loss)[0];
  out.task_loss = tape.value(nodes.task)[0];
  out.penalty = nodes.penalty ? tape.value(*nodes.penalty)[0] : 0.0;
  if (!std::isfinite(out.loss)) throw NumericOverflowError("non-finite loss");
  tape.backward(nodes.loss);
  for (GradTape::Id id : nodes.params) out.grads.push_back(tape.grad(id));
  return out;
}

// Adam moments, one pair per parameter tensor.
struct OptimizerState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::size_t step = 0;
};

inline void step_sgd(const ParamList& params, const std::vector<Matrix>& grads, const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("step_sgd: gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].second;
    if (!p.same_shape(grads[k])) throw ShapeError("step_sgd: shape mismatch for " + params[k].first);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] -= cfg.learning_rate * cfg.weight_decay * p[i];
      p[i] -= cfg.learning_rate * grads[k][i];
    }
  }
}

inline void step_adam(const ParamList& params, const std::vector<Matrix>& grads, OptimizerState& state,
                      const TrainConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("step_adam: gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].second;
    if (!p.same_shape(grads[k]) || !p.same_shape(state.m[k]))
      throw ShapeError("step_adam: shape mismatch for " + params[k].first);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grads[k][i];
      double& m = state.m[k][i];
      double& v = state.v[k][i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p[i] -= cfg.learning_rate * cfg.weight_decay * p[i];
      p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

inline Matrix predict(const PolyNetwork& net, const Matrix& x) { return forward_values(net, x).first; }
inline Matrix predict(const BaselineNet& net, const Matrix& x) { return baseline_predict(net, x); }

inline std::vector<std::size_t> penalty_layers(std::size_t depth, bool include_head) {
  auto idx = hidden_layer_indices(depth);
  if (include_head) idx.push_back(depth);
  return idx;
}

// Mean per-sample DREG penalty of a trained model over `x`.
inline double mean_penalty(const PolyNetwork& net, const Matrix& x, bool include_head = false) {
  const auto dual = forward_dual(net, x).second;
  return dreg_penalty(dual, penalty_layers(net.depth(), include_head));
}

inline double mean_penalty(const BaselineNet& net, const Matrix& x, bool include_head = false) {
  const auto dual = baseline_forward_dual(net, x).second;
  return dreg_penalty(dual, penalty_layers(net.depth(), include_head));
}

struct TrainData {
  Matrix x_train;
  Labels y_train;
  Matrix x_eval;
  Labels y_eval;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;       // batch-size weighted means over the epoch
  double task_loss = 0.0;
  double penalty = 0.0;
  double eval_accuracy = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  bool stopped_early = false;

  const EpochRecord& last() const { return epochs.back(); }
};

template <typename Net>
struct TrainResult {
  Net model;
  TrainLog log;
};

// Mini-batch training for a fixed number of epochs. Shuffling and dropout
// draw from streams forked off cfg.seed, so (net, data, cfg) fixes the run.
template <typename Net>
TrainResult<Net> train(Net net, const TrainData& data, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = data.x_train.rows();
  if (n == 0 || data.y_train.size() != n) throw ArgumentError("train: empty or mislabelled training set");
  const bool has_eval = data.x_eval.rows() > 0;

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(1);
  Rng dropout_rng = root.fork(2);
  OptimizerState opt;
  TrainResult<Net> result{std::move(net), {}};
  Net& model = result.model;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  double best_acc = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const Matrix xb = gather_rows(data.x_train, idx);
      Labels yb;
      for (std::size_t i : idx) yb.push_back(data.y_train[i]);
      LossAndGrads lg;
      try {
        if constexpr (std::is_same_v<Net, BaselineNet>) {
          lg = loss_and_grads(model, xb, yb, cfg, &dropout_rng);
        } else {
          lg = loss_and_grads(model, xb, yb, cfg);
        }
      } catch (const NumericOverflowError& e) {
        throw TrainingDiverged(epoch, batch_index, e.what());
      }
      const double wgt = static_cast<double>(idx.size()) / static_cast<double>(n);
      rec.loss += wgt * lg.loss;
      rec.task_loss += wgt * lg.task_loss;
      rec.penalty += wgt * lg.penalty;
      const ParamList params = parameters(model);
      if (cfg.optimizer == OptimizerKind::Sgd) {
        step_sgd(params, lg.grads, cfg);
      } else {
        step_adam(params, lg.grads, opt, cfg);
      }
    }
    if (has_eval) {
      try {
        rec.eval_accuracy = accuracy(predict(model, data.x_eval), data.y_eval);
      } catch (const NumericOverflowError& e) {
        throw TrainingDiverged(epoch, batch_index, std::string("evaluation: ") + e.what());
      }
    }
    result.log.epochs.push_back(rec);
    if (cfg.patience > 0 && has_eval) {
      if (rec.eval_accuracy > best_acc) {
        best_acc = rec.eval_accuracy;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.log.stopped_early = true;
        break;
      }
    }
  }
  return result;
}

}  // namespace chainz
