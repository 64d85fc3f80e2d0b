#pragma once

// Loss evaluation in a caller-chosen floating type, written independently of
// the double-precision forward pass. Gradient checking runs it in long double
// so that central differences with a 1e-6 step are not swamped by rounding.

#include <algorithm>
#include <cmath>
#include <vector>

#include "drnn/label.hpp"
#include "drnn/model.hpp"
#include "drnn/pooling.hpp"

namespace drnn::detail {

template <class Real>
using Vec = std::vector<Real>;

template <class Real>
void mul_add(const Matrix& w, const Vec<Real>& v, Vec<Real>& out) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    Real acc = 0;
    for (std::size_t j = 0; j < w.cols(); ++j) acc += static_cast<Real>(w(i, j)) * v[j];
    out[i] += acc;
  }
}

template <class Real>
Vec<Real> bias(const Vector& b) {
  return Vec<Real>(b.begin(), b.end());
}

template <class Real>
Real logistic(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

template <class Real>
struct ExtendedState {
  Vec<Real> s, h, v, a;
  const Vec<Real>& dos(int k) const { return k == 0 ? s : (k == 1 ? v : a); }
};

template <class Real>
std::vector<ExtendedState<Real>> extended_run(const CellParams& p, const Matrix& xs) {
  const std::size_t n = p.state_dim;
  std::vector<ExtendedState<Real>> out;
  ExtendedState<Real> prev{Vec<Real>(n), Vec<Real>(n), Vec<Real>(n), Vec<Real>(n)};
  for (std::size_t t = 0; t < xs.rows(); ++t) {
    const Vec<Real> x(xs.row(t).begin(), xs.row(t).end());
    Vec<Real> zi = bias<Real>(p.b_i), zf = bias<Real>(p.b_f), zg = bias<Real>(p.b_s),
              zo = bias<Real>(p.b_o);
    for (int k = 0; k <= p.order; ++k) {
      mul_add(p.w_id[k], prev.dos(k), zi);
      mul_add(p.w_fd[k], prev.dos(k), zf);
    }
    mul_add(p.w_ih, prev.h, zi);
    mul_add(p.w_ix, x, zi);
    mul_add(p.w_fh, prev.h, zf);
    mul_add(p.w_fx, x, zf);
    mul_add(p.w_sh, prev.h, zg);
    mul_add(p.w_sx, x, zg);

    ExtendedState<Real> cur{Vec<Real>(n), Vec<Real>(n), Vec<Real>(n), Vec<Real>(n)};
    for (std::size_t j = 0; j < n; ++j) {
      cur.s[j] = logistic(zf[j]) * prev.s[j] + logistic(zi[j]) * std::tanh(zg[j]);
      cur.v[j] = cur.s[j] - prev.s[j];
      cur.a[j] = cur.v[j] - prev.v[j];
    }
    for (int k = 0; k <= p.order; ++k) mul_add(p.w_od[k], cur.dos(k), zo);
    mul_add(p.w_oh, prev.h, zo);
    mul_add(p.w_ox, x, zo);
    for (std::size_t j = 0; j < n; ++j) cur.h[j] = logistic(zo[j]) * std::tanh(cur.s[j]);
    out.push_back(cur);
    prev = std::move(cur);
  }
  return out;
}

template <class Real>
Real extended_class_loss(const Model& m, const Vec<Real>& h, std::size_t c) {
  Vec<Real> y = bias<Real>(m.output.b_y);
  mul_add(m.output.w_yh, h, y);
  if (m.config.output_tanh) {
    for (auto& v : y) v = std::tanh(v);
  }
  const Real top = *std::max_element(y.begin(), y.end());
  Real total = 0;
  for (auto v : y) total += std::exp(v - top);
  return -(y[c] - top - std::log(total));
}

template <class Real>
Real extended_loss(const Model& m, const Matrix& xs, const Label& label) {
  const auto states = extended_run<Real>(m.cell, xs);
  const std::size_t T = states.size();
  const std::size_t n = m.cell.state_dim;
  if (label.is_frame_level()) {
    Real total = 0;
    for (std::size_t t = 0; t < T; ++t) total += extended_class_loss(m, states[t].h, label.frame_classes()[t]);
    return total;
  }

  const PoolOptions opts = m.config.pool_options();
  Vec<Real> pooled(n);
  std::vector<std::size_t> picks;
  switch (opts.strategy) {
    case Pooling::lhs:
      picks = {T - 1};
      break;
    case Pooling::mean:
      for (std::size_t t = 0; t < T; ++t) picks.push_back(t);
      break;
    case Pooling::max:
      pooled = states[0].h;
      for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t j = 0; j < n; ++j) pooled[j] = std::max(pooled[j], states[t].h[j]);
      }
      break;
    case Pooling::sep:
      for (int k : opts.sep_orders) {
        std::vector<double> energy;
        for (const auto& st : states) {
          Real sq = 0;
          for (auto v : st.dos(k)) sq += v * v;
          energy.push_back(static_cast<double>(std::sqrt(sq)));
        }
        const auto marks = find_landmarks(energy);
        picks.insert(picks.end(), marks.begin(), marks.end());
      }
      picks.push_back(T - 1);
      if (opts.sep_dedup) {
        std::sort(picks.begin(), picks.end());
        picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
      }
      break;
  }
  if (!picks.empty()) {
    for (std::size_t t : picks) {
      for (std::size_t j = 0; j < n; ++j) pooled[j] += states[t].h[j];
    }
    for (auto& v : pooled) v /= static_cast<Real>(picks.size());
  }
  return extended_class_loss(m, pooled, label.sequence_class());
}

}  // namespace drnn::detail
