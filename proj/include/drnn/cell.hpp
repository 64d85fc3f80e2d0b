#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drnn/numerics.hpp"

namespace drnn {

/// Highest derivative-of-state order with a discretization rule.
inline constexpr int kMaxDosOrder = 2;

/// Classic RNN: h = tanh(W_hh·h_prev + W_hx·x + b_h).
struct RnnParams {
  Matrix w_hh;
  Matrix w_hx;
  Vector b_h;
};

Vector rnn_step(const RnnParams& p, const Vector& h_prev, std::span<const double> x);

/// Weights of a differential memory cell of derivative-of-state order N.
///
/// Each gate sees the state derivatives of orders 0..N through its own full
/// state_dim x state_dim matrix (w_id/w_fd/w_od, indexed by order). With N=0
/// the single matrix per gate is the conventional LSTM state-to-gate weight.
struct CellParams {
  int order = 0;
  std::size_t input_dim = 0;
  std::size_t state_dim = 0;

  Matrix w_sh, w_sx;
  Vector b_s;
  Matrix w_ih, w_fh, w_oh;
  Matrix w_ix, w_fx, w_ox;
  Vector b_i, b_f, b_o;
  std::vector<Matrix> w_id, w_fd, w_od;

  static CellParams zeros(int order, std::size_t input_dim, std::size_t state_dim);
  /// Every entry uniform in [-scale, scale).
  static CellParams random(int order, std::size_t input_dim, std::size_t state_dim,
                           std::uint64_t seed, double scale = 0.08);

  /// Throws ShapeError/ConfigError if any tensor disagrees with the declared dims.
  void validate() const;

  /// Calls f(name, rows, cols, span) for every tensor in a fixed order.
  /// Vectors report cols == 1.
  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  friend bool operator==(const CellParams&, const CellParams&) = default;

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    auto mat = [&](const std::string& name, auto& m) { f(name, m.rows(), m.cols(), m.span()); };
    auto vec = [&](const std::string& name, auto& v) { f(name, v.size(), std::size_t{1}, v.span()); };
    mat("W_sh", self.w_sh);
    mat("W_sx", self.w_sx);
    vec("b_s", self.b_s);
    mat("W_ih", self.w_ih);
    mat("W_fh", self.w_fh);
    mat("W_oh", self.w_oh);
    mat("W_ix", self.w_ix);
    mat("W_fx", self.w_fx);
    mat("W_ox", self.w_ox);
    vec("b_i", self.b_i);
    vec("b_f", self.b_f);
    vec("b_o", self.b_o);
    for (std::size_t n = 0; n < self.w_id.size(); ++n) mat("W_id" + std::to_string(n), self.w_id[n]);
    for (std::size_t n = 0; n < self.w_fd.size(); ++n) mat("W_fd" + std::to_string(n), self.w_fd[n]);
    for (std::size_t n = 0; n < self.w_od.size(); ++n) mat("W_od" + std::to_string(n), self.w_od[n]);
  }
};

/// Memory cell state after one step. v and a are the first and second
/// differences of s; the initial state (t == 0) is all zeros.
struct CellState {
  Vector s, h, v, a;
  std::size_t t = 0;

  static CellState initial(std::size_t state_dim);

  /// The order-n derivative of the internal state: s, v or a.
  const Vector& dos(int n) const;
};

/// Everything computed during one step, kept for backpropagation and tests.
struct StepTrace {
  Vector i_pre, f_pre, o_pre, g_pre;
  Vector i, f, o, g;
  CellState state;
};

/// One step of the differential cell from prev on input x:
///   i, f gated by the derivatives of prev.s, then s updated, then v and a
///   refreshed, then o gated by the derivatives of the new s, then h = o*tanh(s).
/// Throws NumericError (tagged with the new step's index) on NaN/Inf.
StepTrace drnn_step(const CellParams& p, const CellState& prev, std::span<const double> x);

/// Folds drnn_step from the zero state over the rows of xs (T x input_dim).
std::vector<StepTrace> run_sequence(const CellParams& p, const Matrix& xs);

}  // namespace drnn
