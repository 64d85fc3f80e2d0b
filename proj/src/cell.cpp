#include "drnn/cell.hpp"

#include <cmath>

#include "drnn/error.hpp"

namespace drnn {

namespace {

void require_shape(const std::string& name, std::size_t rows, std::size_t cols,
                   std::size_t want_rows, std::size_t want_cols) {
  if (rows != want_rows || cols != want_cols) {
    throw ShapeError("cell parameter " + name + " has shape " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", expected " + std::to_string(want_rows) + "x" +
                     std::to_string(want_cols));
  }
}

void check_finite(const Vector& v, const char* what, std::size_t t) {
  if (!v.all_finite()) {
    throw NumericError(std::string("non-finite ") + what + " at time step " + std::to_string(t),
                       static_cast<long>(t));
  }
}

}  // namespace

Vector rnn_step(const RnnParams& p, const Vector& h_prev, std::span<const double> x) {
  if (p.w_hh.rows() != p.w_hh.cols() || p.w_hx.rows() != p.w_hh.rows() ||
      p.b_h.size() != p.w_hh.rows()) {
    throw ShapeError("rnn parameters: W_hh " + p.w_hh.shape_string() + ", W_hx " +
                     p.w_hx.shape_string() + ", b_h " + std::to_string(p.b_h.size()));
  }
  Vector z = p.b_h;
  matvec_add(p.w_hh, h_prev.span(), z.span());
  matvec_add(p.w_hx, x, z.span());
  return tanh_act(z);
}

CellParams CellParams::zeros(int order, std::size_t input_dim, std::size_t state_dim) {
  if (order < 0 || order > kMaxDosOrder) {
    throw ConfigError("derivative-of-state order must be in [0, " + std::to_string(kMaxDosOrder) +
                      "], got " + std::to_string(order));
  }
  const std::size_t n = state_dim, m = input_dim;
  CellParams p;
  p.order = order;
  p.input_dim = m;
  p.state_dim = n;
  p.w_sh = Matrix(n, n);
  p.w_sx = Matrix(n, m);
  p.b_s = Vector(n);
  p.w_ih = p.w_fh = p.w_oh = Matrix(n, n);
  p.w_ix = p.w_fx = p.w_ox = Matrix(n, m);
  p.b_i = p.b_f = p.b_o = Vector(n);
  p.w_id.assign(order + 1, Matrix(n, n));
  p.w_fd.assign(order + 1, Matrix(n, n));
  p.w_od.assign(order + 1, Matrix(n, n));
  return p;
}

CellParams CellParams::random(int order, std::size_t input_dim, std::size_t state_dim,
                              std::uint64_t seed, double scale) {
  CellParams p = zeros(order, input_dim, state_dim);
  Rng rng(seed);
  p.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<double> data) {
    for (double& x : data) x = rng.uniform(-scale, scale);
  });
  return p;
}

void CellParams::validate() const {
  if (order < 0 || order > kMaxDosOrder) {
    throw ConfigError("derivative-of-state order must be in [0, " + std::to_string(kMaxDosOrder) +
                      "], got " + std::to_string(order));
  }
  const std::size_t expected = static_cast<std::size_t>(order) + 1;
  if (w_id.size() != expected || w_fd.size() != expected || w_od.size() != expected) {
    throw ShapeError("cell of order " + std::to_string(order) + " needs " +
                     std::to_string(expected) + " derivative weights per gate");
  }
  const std::size_t n = state_dim, m = input_dim;
  for_each_tensor([&](const std::string& name, std::size_t rows, std::size_t cols,
                      std::span<const double>) {
    if (name.starts_with("b_")) {
      require_shape(name, rows, cols, n, 1);
    } else if (name.ends_with('x')) {
      require_shape(name, rows, cols, n, m);
    } else {
      require_shape(name, rows, cols, n, n);
    }
  });
}

CellState CellState::initial(std::size_t state_dim) {
  CellState st;
  st.s = st.h = st.v = st.a = Vector(state_dim);
  st.t = 0;
  return st;
}

const Vector& CellState::dos(int n) const {
  switch (n) {
    case 0: return s;
    case 1: return v;
    case 2: return a;
    default: throw ConfigError("no discretization for derivative order " + std::to_string(n));
  }
}

StepTrace drnn_step(const CellParams& p, const CellState& prev, std::span<const double> x) {
  const std::size_t n = p.state_dim;
  if (x.size() != p.input_dim) {
    throw ShapeError("input of length " + std::to_string(x.size()) + " fed to a cell with input dim " +
                     std::to_string(p.input_dim));
  }
  if (prev.s.size() != n || prev.h.size() != n || prev.v.size() != n || prev.a.size() != n) {
    throw ShapeError("previous cell state does not match state dim " + std::to_string(n));
  }
  const std::size_t t = prev.t + 1;
  StepTrace tr;

  // Input and forget gates read the derivatives of the previous state.
  tr.i_pre = p.b_i;
  tr.f_pre = p.b_f;
  for (int k = 0; k <= p.order; ++k) {
    matvec_add(p.w_id[k], prev.dos(k).span(), tr.i_pre.span());
    matvec_add(p.w_fd[k], prev.dos(k).span(), tr.f_pre.span());
  }
  matvec_add(p.w_ih, prev.h.span(), tr.i_pre.span());
  matvec_add(p.w_ix, x, tr.i_pre.span());
  matvec_add(p.w_fh, prev.h.span(), tr.f_pre.span());
  matvec_add(p.w_fx, x, tr.f_pre.span());
  check_finite(tr.i_pre, "input gate pre-activation", t);
  check_finite(tr.f_pre, "forget gate pre-activation", t);
  tr.i = sigmoid(tr.i_pre);
  tr.f = sigmoid(tr.f_pre);

  tr.g_pre = p.b_s;
  matvec_add(p.w_sh, prev.h.span(), tr.g_pre.span());
  matvec_add(p.w_sx, x, tr.g_pre.span());
  check_finite(tr.g_pre, "candidate pre-activation", t);
  tr.g = tanh_act(tr.g_pre);

  CellState& st = tr.state;
  st.t = t;
  st.s = Vector(n);
  for (std::size_t j = 0; j < n; ++j) st.s[j] = tr.f[j] * prev.s[j] + tr.i[j] * tr.g[j];
  check_finite(st.s, "internal state", t);
  st.v = st.s - prev.s;
  st.a = st.v - prev.v;

  // The output gate reads the derivatives of the state just computed.
  tr.o_pre = p.b_o;
  for (int k = 0; k <= p.order; ++k) matvec_add(p.w_od[k], st.dos(k).span(), tr.o_pre.span());
  matvec_add(p.w_oh, prev.h.span(), tr.o_pre.span());
  matvec_add(p.w_ox, x, tr.o_pre.span());
  check_finite(tr.o_pre, "output gate pre-activation", t);
  tr.o = sigmoid(tr.o_pre);

  st.h = Vector(n);
  for (std::size_t j = 0; j < n; ++j) st.h[j] = tr.o[j] * std::tanh(st.s[j]);
  check_finite(st.h, "hidden state", t);
  return tr;
}

std::vector<StepTrace> run_sequence(const CellParams& p, const Matrix& xs) {
  if (xs.rows() == 0) throw ShapeError("run_sequence: empty input sequence");
  if (xs.cols() != p.input_dim) {
    throw ShapeError("run_sequence: sequence has " + std::to_string(xs.cols()) +
                     " features per frame, cell expects " + std::to_string(p.input_dim));
  }
  std::vector<StepTrace> traces;
  traces.reserve(xs.rows());
  CellState state = CellState::initial(p.state_dim);
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    traces.push_back(drnn_step(p, t == 0 ? state : traces.back().state, xs.row(t)));
  }
  return traces;
}

}  // namespace drnn
