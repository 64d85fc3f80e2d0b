#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "drnn/data.hpp"
#include "drnn/label.hpp"
#include "drnn/model.hpp"

namespace drnn {

/// full: exact reverse-mode gradients through the unrolled cell.
/// truncated: adjoints that enter a gate's derivative-of-state inputs stay in
/// the current step. The input and forget gates lose their path back into the
/// previous state's derivatives entirely; the output gate's path reaches the
/// current internal state but not the earlier states inside v_t and a_t.
enum class Bptt { full, truncated };

std::string_view to_string(Bptt mode);
Bptt parse_bptt(std::string_view text);

/// One tensor per model tensor, same shapes.
struct GradientSet {
  CellParams cell;
  OutputParams output;

  static GradientSet zeros_like(const Model& model);

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

  double norm() const;
  GradientSet& operator*=(double scale);
};

struct BackwardResult {
  double loss = 0.0;
  GradientSet grads;
  /// Fraction of correct predictions on this example (0/1 for sequence labels).
  double accuracy = 0.0;
};

/// Loss and gradients of one labelled sequence. Pooling landmarks are held
/// fixed at their forward-pass positions. Throws NumericError naming the
/// tensor (or time step) on a non-finite gradient.
BackwardResult backward(const Model& model, const Matrix& xs, const Label& label, Bptt mode);

struct TrainConfig {
  double learning_rate = 0.0001;
  int epochs = 50;
  Bptt bptt = Bptt::full;
  std::uint64_t seed = 1;
  bool shuffle = true;
  /// Rescale a gradient whose L2 norm exceeds this; 0 disables clipping.
  double clip_norm = 0.0;

  void validate() const;
};

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

/// Applies θ ← θ - lr·∇ once per training sequence. Loss and accuracy are
/// measured on each sequence just before its update. `epoch` (0-based)
/// seeds the visiting order when shuffling is on.
EpochStats sgd_epoch(Model& model, const Dataset& train, const TrainConfig& cfg, std::size_t epoch);

struct EvalResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::vector<Prediction> predictions;  // sequence-level, one per sequence
};

/// Forward-only pass over a dataset. Frame-labelled sequences count the
/// fraction of correctly classified frames.
EvalResult evaluate(const Model& model, const Dataset& data);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// Runs cfg.epochs epochs. `on_epoch` sees every record and whether
/// validation accuracy strictly improved (the first epoch always does).
/// When `val` is empty the training accuracy stands in for it.
std::vector<EpochRecord> train(Model& model, const Dataset& train_set, const Dataset& val,
                               const TrainConfig& cfg,
                               const std::function<void(const EpochRecord&, bool improved)>& on_epoch = {});

struct TensorCheck {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::size_t worst_entry = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Fault injection: double the largest-magnitude analytic entry of this tensor.
  std::optional<std::string> corrupt_tensor;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double tolerance = 0.0;
  bool passed = true;
};

/// Central finite differences against full-mode analytic gradients.
/// Relative error is |g - g_fd| / max(|g|, |g_fd|, 1e-8).
GradCheckReport grad_check(const Model& model, const Matrix& xs, const Label& label,
                           const GradCheckOptions& opts = {});

}  // namespace drnn
