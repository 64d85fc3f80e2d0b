#include "drnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "drnn/error.hpp"

namespace drnn {

PoolOptions ModelConfig::pool_options() const {
  PoolOptions opts;
  opts.strategy = pooling;
  opts.sep_dedup = sep_dedup;
  if (sep_orders.empty()) {
    opts.sep_orders.clear();
    for (int k = 0; k <= order; ++k) opts.sep_orders.push_back(k);
  } else {
    opts.sep_orders = sep_orders;
  }
  return opts;
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model input dim must be positive");
  if (state_dim == 0) throw ConfigError("model state dim must be positive");
  if (classes < 2) throw ConfigError("a classifier needs at least 2 classes");
  if (order < 0 || order > kMaxDosOrder) {
    throw ConfigError("derivative-of-state order must be in [0, " + std::to_string(kMaxDosOrder) +
                      "], got " + std::to_string(order));
  }
  for (int k : sep_orders) {
    if (k < 0 || k > order) {
      throw ConfigError("SEP order " + std::to_string(k) + " is outside 0.." +
                        std::to_string(order));
    }
  }
}

std::size_t Prediction::argmax() const {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

Vector softmax(const Vector& y) {
  Vector p(y.size());
  if (y.empty()) return p;
  const double top = *std::max_element(y.begin(), y.end());
  double total = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) {
    p[c] = std::exp(y[c] - top);
    total += p[c];
  }
  p *= 1.0 / total;
  return p;
}

Prediction output_layer(const OutputParams& op, const Vector& h, bool use_tanh) {
  if (op.w_yh.cols() != h.size() || op.b_y.size() != op.w_yh.rows()) {
    throw ShapeError("output layer W_yh " + op.w_yh.shape_string() + ", b_y " +
                     std::to_string(op.b_y.size()) + " applied to state of length " +
                     std::to_string(h.size()));
  }
  Prediction pred;
  pred.y = op.b_y;
  matvec_add(op.w_yh, h.span(), pred.y.span());
  if (use_tanh) pred.y = tanh_act(pred.y);
  pred.p = softmax(pred.y);
  return pred;
}

double sequence_loss(const Prediction& pred, std::size_t c) {
  if (c >= pred.p.size()) {
    throw ConfigError("class index " + std::to_string(c + 1) + " outside 1.." +
                      std::to_string(pred.p.size()));
  }
  return -std::log(pred.p[c]);
}

double frame_loss(std::span<const Prediction> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) {
    throw ShapeError("frame_loss: " + std::to_string(preds.size()) + " predictions but " +
                     std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < preds.size(); ++t) total += sequence_loss(preds[t], labels[t]);
  return total;
}

Model Model::zeros(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  m.cell = CellParams::zeros(config.order, config.input_dim, config.state_dim);
  m.output.w_yh = Matrix(config.classes, config.state_dim);
  m.output.b_y = Vector(config.classes);
  return m;
}

Model Model::random(const ModelConfig& config, std::uint64_t seed, double scale) {
  Model m = zeros(config);
  Rng rng(seed);
  m.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<double> data) {
    for (double& x : data) x = rng.uniform(-scale, scale);
  });
  return m;
}

void Model::validate() const {
  config.validate();
  cell.validate();
  if (cell.order != config.order || cell.input_dim != config.input_dim ||
      cell.state_dim != config.state_dim) {
    throw ShapeError("cell parameters do not match the model configuration");
  }
  if (output.w_yh.rows() != config.classes || output.w_yh.cols() != config.state_dim ||
      output.b_y.size() != config.classes) {
    throw ShapeError("output parameters W_yh " + output.w_yh.shape_string() + ", b_y " +
                     std::to_string(output.b_y.size()) + " do not match " +
                     std::to_string(config.classes) + " classes");
  }
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for_each_tensor([&](const std::string&, std::size_t r, std::size_t c, auto) { total += r * c; });
  return total;
}

Prediction predict_sequence(const Model& model, const Matrix& xs) {
  const auto traces = run_sequence(model.cell, xs);
  const auto pooled = pool(traces, model.config.pool_options(), model.config.order);
  return output_layer(model.output, pooled.h, model.config.output_tanh);
}

std::vector<Prediction> predict_frames(const Model& model, const Matrix& xs) {
  const auto traces = run_sequence(model.cell, xs);
  std::vector<Prediction> preds;
  preds.reserve(traces.size());
  for (const auto& tr : traces) {
    preds.push_back(output_layer(model.output, tr.state.h, model.config.output_tanh));
  }
  return preds;
}

double evaluate_loss(const Model& model, const Matrix& xs, const Label& label) {
  if (label.is_frame_level()) {
    const auto preds = predict_frames(model, xs);
    return frame_loss(preds, label.frame_classes());
  }
  return sequence_loss(predict_sequence(model, xs), label.sequence_class());
}

}  // namespace drnn
