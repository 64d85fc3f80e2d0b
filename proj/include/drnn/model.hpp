#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drnn/cell.hpp"
#include "drnn/label.hpp"
#include "drnn/numerics.hpp"
#include "drnn/pooling.hpp"

namespace drnn {

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t state_dim = 0;
  std::size_t classes = 2;
  int order = 2;
  Pooling pooling = Pooling::sep;
  /// Orders whose SEP landmarks are pooled. Empty means 0..order.
  std::vector<int> sep_orders;
  bool sep_dedup = false;
  /// Squash scores with tanh before the softmax.
  bool output_tanh = true;

  PoolOptions pool_options() const;
  /// Throws ConfigError on inconsistent dims, orders or class count.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct OutputParams {
  Matrix w_yh;  // classes x state_dim
  Vector b_y;

  template <class F>
  void for_each_tensor(F&& f) {
    f(std::string("W_yh"), w_yh.rows(), w_yh.cols(), w_yh.span());
    f(std::string("b_y"), b_y.size(), std::size_t{1}, b_y.span());
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(std::string("W_yh"), w_yh.rows(), w_yh.cols(), w_yh.span());
    f(std::string("b_y"), b_y.size(), std::size_t{1}, b_y.span());
  }

  friend bool operator==(const OutputParams&, const OutputParams&) = default;
};

struct Prediction {
  Vector y;  // scores
  Vector p;  // softmax(y)

  std::size_t argmax() const;
};

/// Numerically stable softmax (max-subtracted).
Vector softmax(const Vector& y);

/// y = tanh(W_yh·h + b_y) (tanh optional), p = softmax(y).
Prediction output_layer(const OutputParams& op, const Vector& h, bool use_tanh = true);

/// -log p_c for a 0-based class c.
double sequence_loss(const Prediction& pred, std::size_t c);
/// Sum over frames of -log p_{t,c_t}.
double frame_loss(std::span<const Prediction> preds, std::span<const std::size_t> labels);

/// Cell, pooling and output layer as one classifier.
struct Model {
  ModelConfig config;
  CellParams cell;
  OutputParams output;

  /// Uniform init in [-scale, scale) for every weight and bias.
  static Model random(const ModelConfig& config, std::uint64_t seed, double scale = 0.08);
  static Model zeros(const ModelConfig& config);

  void validate() const;

  /// Visits cell tensors then output tensors.
  template <class F>
  void for_each_tensor(F&& f) {
    cell.for_each_tensor(f);
    output.for_each_tensor(f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    cell.for_each_tensor(f);
    output.for_each_tensor(f);
  }

  std::size_t parameter_count() const;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Runs the cell, pools the hidden states, classifies the pooled vector.
Prediction predict_sequence(const Model& model, const Matrix& xs);
/// Classifies each hidden state h_t on its own.
std::vector<Prediction> predict_frames(const Model& model, const Matrix& xs);

/// Loss of a model on one labelled sequence (sequence- or frame-level).
double evaluate_loss(const Model& model, const Matrix& xs, const Label& label);

}  // namespace drnn
