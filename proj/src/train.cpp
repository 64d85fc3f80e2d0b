#include "drnn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "drnn/error.hpp"
#include "extended_loss.hpp"

namespace drnn {

namespace {

/// Adjoint of the pre-tanh output scores for -log p_c.
Vector output_score_adjoint(const Prediction& pred, std::size_t c, bool use_tanh) {
  Vector dz = pred.p;
  dz[c] -= 1.0;
  if (use_tanh) {
    for (std::size_t j = 0; j < dz.size(); ++j) dz[j] *= 1.0 - pred.y[j] * pred.y[j];
  }
  return dz;
}

void add_scaled(std::span<double> out, std::span<const double> v, double scale) {
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += scale * v[j];
}

void require_finite(const Vector& v, const char* what, std::size_t t) {
  if (!v.all_finite()) {
    throw NumericError(std::string("non-finite adjoint of ") + what + " at time step " +
                           std::to_string(t + 1),
                       static_cast<long>(t + 1));
  }
}

}  // namespace

std::string_view to_string(Bptt mode) { return mode == Bptt::full ? "full" : "truncated"; }

Bptt parse_bptt(std::string_view text) {
  if (text == "full") return Bptt::full;
  if (text == "truncated") return Bptt::truncated;
  throw ConfigError("unknown BPTT mode '" + std::string(text) + "' (expected full or truncated)");
}

GradientSet GradientSet::zeros_like(const Model& model) {
  GradientSet g;
  g.cell = CellParams::zeros(model.cell.order, model.cell.input_dim, model.cell.state_dim);
  g.output.w_yh = Matrix(model.output.w_yh.rows(), model.output.w_yh.cols());
  g.output.b_y = Vector(model.output.b_y.size());
  return g;
}

double GradientSet::norm() const {
  double sq = 0.0;
  for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<const double> d) {
    for (double x : d) sq += x * x;
  });
  return std::sqrt(sq);
}

GradientSet& GradientSet::operator*=(double scale) {
  for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<double> d) {
    for (double& x : d) x *= scale;
  });
  return *this;
}

BackwardResult backward(const Model& model, const Matrix& xs, const Label& label, Bptt mode) {
  const CellParams& p = model.cell;
  const auto traces = run_sequence(p, xs);
  const std::size_t T = traces.size();
  const std::size_t n = p.state_dim;
  const bool use_tanh = model.config.output_tanh;
  const bool full = mode == Bptt::full;

  BackwardResult res;
  res.grads = GradientSet::zeros_like(model);
  CellParams& g = res.grads.cell;
  OutputParams& go = res.grads.output;

  // Loss adjoints on every hidden state.
  std::vector<Vector> dh(T, Vector(n));
  auto output_backward = [&](const Vector& h, std::size_t c, Vector& dh_out) {
    const Prediction pred = output_layer(model.output, h, use_tanh);
    res.loss += sequence_loss(pred, c);
    const Vector dz = output_score_adjoint(pred, c, use_tanh);
    outer_add(go.w_yh, dz.span(), h.span());
    go.b_y += dz;
    matvec_transposed_add(model.output.w_yh, dz.span(), dh_out.span());
    return pred.argmax() == c;
  };

  if (label.is_frame_level()) {
    const auto& classes = label.frame_classes();
    if (classes.size() != T) {
      throw ShapeError("frame labels: " + std::to_string(classes.size()) + " labels for " +
                       std::to_string(T) + " frames");
    }
    std::size_t correct = 0;
    for (std::size_t t = 0; t < T; ++t) correct += output_backward(traces[t].state.h, classes[t], dh[t]);
    res.accuracy = static_cast<double>(correct) / static_cast<double>(T);
  } else {
    const auto pooled = pool(traces, model.config.pool_options(), model.config.order);
    Vector dpooled(n);
    res.accuracy = output_backward(pooled.h, label.sequence_class(), dpooled) ? 1.0 : 0.0;
    if (pooled.strategy == Pooling::max) {
      for (std::size_t j = 0; j < n; ++j) dh[pooled.indices[j]][j] += dpooled[j];
    } else {
      const double w = 1.0 / static_cast<double>(pooled.indices.size());
      for (std::size_t t : pooled.indices) add_scaled(dh[t].span(), dpooled.span(), w);
    }
  }

  // Adjoints flowing into the state of step t from step t+1.
  Vector carry_s(n), carry_h(n), carry_v(n), carry_a(n);
  const CellState initial = CellState::initial(n);
  Vector gh(n), gs(n), gv(n), ga(n);
  Vector dzo(n), dzi(n), dzf(n), dzg(n);

  for (std::size_t t = T; t-- > 0;) {
    const StepTrace& tr = traces[t];
    const CellState& cur = tr.state;
    const CellState& prev = t == 0 ? initial : traces[t - 1].state;
    const auto x = xs.row(t);

    gh = dh[t];
    gh += carry_h;
    gs = carry_s;
    gv = carry_v;
    ga = carry_a;
    carry_s.fill(0.0);
    carry_h.fill(0.0);
    carry_v.fill(0.0);
    carry_a.fill(0.0);

    // h = o * tanh(s)
    for (std::size_t j = 0; j < n; ++j) {
      const double th = std::tanh(cur.s[j]);
      const double d_o = gh[j] * th;
      gs[j] += gh[j] * tr.o[j] * (1.0 - th * th);
      dzo[j] = d_o * tr.o[j] * (1.0 - tr.o[j]);
    }

    // o = sigmoid(sum_k W_od[k] dos_k(s_t) + W_oh h_{t-1} + W_ox x + b_o)
    for (int k = 0; k <= p.order; ++k) outer_add(g.w_od[k], dzo.span(), cur.dos(k).span());
    outer_add(g.w_oh, dzo.span(), prev.h.span());
    outer_add(g.w_ox, dzo.span(), x);
    g.b_o += dzo;
    matvec_transposed_add(p.w_oh, dzo.span(), carry_h.span());
    matvec_transposed_add(p.w_od[0], dzo.span(), gs.span());
    if (p.order >= 1) matvec_transposed_add(p.w_od[1], dzo.span(), gv.span());
    if (p.order >= 2) matvec_transposed_add(p.w_od[2], dzo.span(), ga.span());

    // a = v - v_{t-1}, v = s - s_{t-1}. Truncation keeps only the current-step terms.
    gv += ga;
    if (full) carry_v -= ga;
    gs += gv;
    if (full) carry_s -= gv;

    // s = f * s_{t-1} + i * g
    for (std::size_t j = 0; j < n; ++j) {
      carry_s[j] += gs[j] * tr.f[j];
      dzf[j] = gs[j] * prev.s[j] * tr.f[j] * (1.0 - tr.f[j]);
      dzi[j] = gs[j] * tr.g[j] * tr.i[j] * (1.0 - tr.i[j]);
      dzg[j] = gs[j] * tr.i[j] * (1.0 - tr.g[j] * tr.g[j]);
    }

    outer_add(g.w_sh, dzg.span(), prev.h.span());
    outer_add(g.w_sx, dzg.span(), x);
    g.b_s += dzg;
    matvec_transposed_add(p.w_sh, dzg.span(), carry_h.span());

    // i and f read the derivatives of s_{t-1}.
    for (int k = 0; k <= p.order; ++k) {
      outer_add(g.w_id[k], dzi.span(), prev.dos(k).span());
      outer_add(g.w_fd[k], dzf.span(), prev.dos(k).span());
    }
    outer_add(g.w_ih, dzi.span(), prev.h.span());
    outer_add(g.w_ix, dzi.span(), x);
    g.b_i += dzi;
    outer_add(g.w_fh, dzf.span(), prev.h.span());
    outer_add(g.w_fx, dzf.span(), x);
    g.b_f += dzf;
    matvec_transposed_add(p.w_ih, dzi.span(), carry_h.span());
    matvec_transposed_add(p.w_fh, dzf.span(), carry_h.span());
    if (full) {
      Vector* carries[] = {&carry_s, &carry_v, &carry_a};
      for (int k = 0; k <= p.order; ++k) {
        matvec_transposed_add(p.w_id[k], dzi.span(), carries[k]->span());
        matvec_transposed_add(p.w_fd[k], dzf.span(), carries[k]->span());
      }
    }

    require_finite(carry_s, "internal state", t);
    require_finite(carry_h, "hidden state", t);
  }

  res.grads.for_each_tensor([&](const std::string& name, std::size_t, std::size_t,
                                std::span<const double> d) {
    for (double x : d) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient in tensor " + name);
    }
  });
  return res;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be a non-negative number");
  }
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
}

EpochStats sgd_epoch(Model& model, const Dataset& train, const TrainConfig& cfg, std::size_t epoch) {
  if (train.empty()) throw DataError(DataError::Code::no_sequences, "training set is empty");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  if (cfg.shuffle) {
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
    rng.shuffle(order);
  }

  EpochStats stats;
  for (std::size_t idx : order) {
    const auto& seq = train.sequences[idx];
    BackwardResult r;
    try {
      r = backward(model, seq.features, seq.label, cfg.bptt);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch + 1) + ", sequence '" + seq.id + "': " + e.what(),
                         e.time_index());
    }
    if (!std::isfinite(r.loss)) {
      throw NumericError("epoch " + std::to_string(epoch + 1) + ", sequence '" + seq.id +
                         "': non-finite loss");
    }
    stats.mean_loss += r.loss;
    stats.accuracy += r.accuracy;
    if (cfg.clip_norm > 0.0) {
      const double norm = r.grads.norm();
      if (norm > cfg.clip_norm) r.grads *= cfg.clip_norm / norm;
    }
    if (cfg.learning_rate == 0.0) continue;
    // Tensors are visited in the same order on both sides.
    std::vector<std::span<const double>> grads;
    r.grads.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<const double> d) {
      grads.push_back(d);
    });
    std::size_t k = 0;
    model.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<double> w) {
      const auto gk = grads[k++];
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.learning_rate * gk[j];
    });
  }
  stats.mean_loss /= static_cast<double>(train.size());
  stats.accuracy /= static_cast<double>(train.size());
  return stats;
}

EvalResult evaluate(const Model& model, const Dataset& data) {
  EvalResult res;
  if (data.empty()) return res;
  for (const auto& seq : data.sequences) {
    if (seq.label.is_frame_level()) {
      const auto preds = predict_frames(model, seq.features);
      const auto& classes = seq.label.frame_classes();
      res.mean_loss += frame_loss(preds, classes);
      std::size_t correct = 0;
      for (std::size_t t = 0; t < preds.size(); ++t) correct += preds[t].argmax() == classes[t];
      res.accuracy += static_cast<double>(correct) / static_cast<double>(preds.size());
      res.predictions.push_back(preds.back());
    } else {
      Prediction pred = predict_sequence(model, seq.features);
      res.mean_loss += sequence_loss(pred, seq.label.sequence_class());
      res.accuracy += pred.argmax() == seq.label.sequence_class() ? 1.0 : 0.0;
      res.predictions.push_back(std::move(pred));
    }
  }
  res.mean_loss /= static_cast<double>(data.size());
  res.accuracy /= static_cast<double>(data.size());
  return res;
}

std::vector<EpochRecord> train(Model& model, const Dataset& train_set, const Dataset& val,
                               const TrainConfig& cfg,
                               const std::function<void(const EpochRecord&, bool)>& on_epoch) {
  cfg.validate();
  model.validate();
  std::vector<EpochRecord> history;
  double best = -1.0;
  const auto start = std::chrono::steady_clock::now();
  for (int e = 0; e < cfg.epochs; ++e) {
    const EpochStats stats = sgd_epoch(model, train_set, cfg, static_cast<std::size_t>(e));
    EpochRecord rec;
    rec.epoch = static_cast<std::size_t>(e) + 1;
    rec.mean_loss = stats.mean_loss;
    rec.train_accuracy = stats.accuracy;
    rec.val_accuracy = val.empty() ? evaluate(model, train_set).accuracy : evaluate(model, val).accuracy;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool improved = rec.val_accuracy > best;
    if (improved) best = rec.val_accuracy;
    history.push_back(rec);
    if (on_epoch) on_epoch(rec, improved);
  }
  return history;
}

GradCheckReport grad_check(const Model& model, const Matrix& xs, const Label& label,
                           const GradCheckOptions& opts) {
  GradCheckReport report;
  report.tolerance = opts.tolerance;
  GradientSet analytic = backward(model, xs, label, Bptt::full).grads;

  if (opts.corrupt_tensor) {
    bool found = false;
    analytic.for_each_tensor([&](const std::string& name, std::size_t, std::size_t, std::span<double> d) {
      if (name != *opts.corrupt_tensor || d.empty()) return;
      found = true;
      auto worst = std::max_element(d.begin(), d.end(),
                                    [](double a, double b) { return std::abs(a) < std::abs(b); });
      *worst *= 2.0;
    });
    if (!found) throw ConfigError("fault injection: no tensor named '" + *opts.corrupt_tensor + "'");
  }

  std::vector<std::span<const double>> analytic_spans;
  analytic.for_each_tensor([&](const std::string&, std::size_t, std::size_t, std::span<const double> d) {
    analytic_spans.push_back(d);
  });

  Model probe = model;
  std::size_t k = 0;
  probe.for_each_tensor([&](const std::string& name, std::size_t, std::size_t, std::span<double> w) {
    const auto ga = analytic_spans[k++];
    TensorCheck check;
    check.name = name;
    check.entries = w.size();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + opts.step;
      const long double up = detail::extended_loss<long double>(probe, xs, label);
      w[j] = saved - opts.step;
      const long double down = detail::extended_loss<long double>(probe, xs, label);
      w[j] = saved;
      const double fd = static_cast<double>((up - down) / (2.0L * opts.step));
      const double denom = std::max({std::abs(ga[j]), std::abs(fd), 1e-8});
      const double rel = std::abs(ga[j] - fd) / denom;
      if (rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_entry = j;
      }
    }
    check.passed = check.max_rel_error < opts.tolerance;
    report.passed = report.passed && check.passed;
    report.tensors.push_back(std::move(check));
  });
  return report;
}

}  // namespace drnn
