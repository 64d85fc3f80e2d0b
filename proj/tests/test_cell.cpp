#include <doctest.h>

#include <cmath>

#include "drnn/cell.hpp"
#include "drnn/error.hpp"
#include "oracles.hpp"

using namespace drnn;

namespace {

Matrix random_inputs(std::size_t T, std::size_t m, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  Matrix xs(T, m);
  for (double& x : xs.span()) x = rng.uniform(lo, hi);
  return xs;
}

CellParams scalar_cell() {
  CellParams p = CellParams::zeros(2, 1, 1);
  p.w_sh(0, 0) = 0.5;
  p.w_sx(0, 0) = 1.0;
  p.b_s[0] = 0.1;
  p.w_ih(0, 0) = 0.2;
  p.w_fh(0, 0) = -0.3;
  p.w_oh(0, 0) = 0.4;
  p.w_ix(0, 0) = 0.6;
  p.w_fx(0, 0) = 0.7;
  p.w_ox(0, 0) = -0.8;
  p.b_i[0] = 0.05;
  p.b_f[0] = -0.05;
  p.b_o[0] = 0.1;
  const double id[] = {0.3, 0.2, 0.1}, fd[] = {-0.2, 0.4, 0.5}, od[] = {0.25, -0.35, 0.45};
  for (int n = 0; n < 3; ++n) {
    p.w_id[n](0, 0) = id[n];
    p.w_fd[n](0, 0) = fd[n];
    p.w_od[n](0, 0) = od[n];
  }
  return p;
}

}  // namespace

TEST_CASE("rnn_step examples") {
  RnnParams zero{Matrix(2, 2), Matrix(2, 3), Vector(2)};
  CHECK(rnn_step(zero, Vector{0.3, -0.2}, Vector{1, 2, 3}.span()) == Vector{0, 0});

  RnnParams id{Matrix(1, 1), Matrix::identity(1), Vector(1)};
  CHECK(rnn_step(id, Vector{0.0}, Vector{0.5}.span())[0] == std::tanh(0.5));

  Rng rng(4);
  RnnParams p{Matrix(3, 3), Matrix(3, 2), Vector(3)};
  for (double& x : p.w_hh.span()) x = rng.uniform(-1, 1);
  for (double& x : p.w_hx.span()) x = rng.uniform(-1, 1);
  for (double& x : p.b_h) x = rng.uniform(-1, 1);
  const Vector h_prev{0.1, -0.4, 0.7};
  const Vector x{0.9, -0.3};
  const Vector h = rnn_step(p, h_prev, x.span());
  for (std::size_t r = 0; r < 3; ++r) {
    double z = p.b_h[r];
    for (std::size_t c = 0; c < 3; ++c) z += p.w_hh(r, c) * h_prev[c];
    for (std::size_t c = 0; c < 2; ++c) z += p.w_hx(r, c) * x[c];
    CHECK(h[r] == doctest::Approx(std::tanh(z)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(rnn_step(p, h_prev, Vector{1, 2, 3}.span()), ShapeError);
}

TEST_CASE("zero parameters give half-open gates and a zero state") {
  for (int order = 0; order <= 2; ++order) {
    const CellParams p = CellParams::zeros(order, 3, 2);
    const StepTrace tr = drnn_step(p, CellState::initial(2), Vector{1, -2, 3}.span());
    for (const Vector* gate : {&tr.i, &tr.f, &tr.o}) CHECK(*gate == Vector{0.5, 0.5});
    CHECK(tr.state.s == Vector{0, 0});
    CHECK(tr.state.v == Vector{0, 0});
    CHECK(tr.state.a == Vector{0, 0});
    CHECK(tr.state.h == Vector{0, 0});
    CHECK(tr.state.t == 1);
  }
}

TEST_CASE("order-0 cell equals an independently written LSTM") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8), T = 1 + rng.below(16);
    const CellParams p = CellParams::random(0, m, n, 100 + trial, 0.5);
    const Matrix xs = random_inputs(T, m, 900 + trial);
    const auto traces = run_sequence(p, xs);
    const auto lstm = oracle::Lstm::from_cell(p);
    oracle::Lstm::State st{oracle::Vec(n), oracle::Vec(n)};
    for (std::size_t t = 0; t < T; ++t) {
      st = lstm.step(st, oracle::Vec(xs.row(t).begin(), xs.row(t).end()));
      for (std::size_t r = 0; r < n; ++r) {
        CHECK(std::abs(traces[t].state.h[r] - st.h[r]) < 1e-12);
        CHECK(std::abs(traces[t].state.s[r] - st.s[r]) < 1e-12);
      }
    }
  }
}

TEST_CASE("scalar second-order cell matches a hand expansion") {
  const CellParams p = scalar_cell();
  const Matrix xs{{0.5}, {-1.0}, {2.0}};
  const auto traces = run_sequence(p, xs);

  // Step by step with scalars.
  auto sg = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  double s = 0, v = 0, a = 0, h = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double x = xs(t, 0);
    const double i = sg(0.3 * s + 0.2 * v + 0.1 * a + 0.2 * h + 0.6 * x + 0.05);
    const double f = sg(-0.2 * s + 0.4 * v + 0.5 * a - 0.3 * h + 0.7 * x - 0.05);
    const double g = std::tanh(0.5 * h + 1.0 * x + 0.1);
    const double s_new = f * s + i * g;
    const double v_new = s_new - s;
    const double a_new = v_new - v;
    const double o = sg(0.25 * s_new - 0.35 * v_new + 0.45 * a_new + 0.4 * h - 0.8 * x + 0.1);
    h = o * std::tanh(s_new);
    s = s_new, v = v_new, a = a_new;
    CHECK(traces[t].state.s[0] == doctest::Approx(s).epsilon(1e-14));
    CHECK(traces[t].state.v[0] == doctest::Approx(v).epsilon(1e-14));
    CHECK(traces[t].state.a[0] == doctest::Approx(a).epsilon(1e-14));
    CHECK(traces[t].state.h[0] == doctest::Approx(h).epsilon(1e-14));
  }
  // Pinned values.
  CHECK(traces[0].state.s[0] == doctest::Approx(0.31504271675098794).epsilon(1e-14));
  CHECK(traces[1].state.a[0] == doctest::Approx(-0.8006070121679604).epsilon(1e-14));
  CHECK(traces[2].state.h[0] == doctest::Approx(0.13160818256709375).epsilon(1e-14));
}

TEST_CASE("single step: derivatives equal the state") {
  const CellParams p = CellParams::random(2, 3, 4, 5, 0.5);
  const auto traces = run_sequence(p, random_inputs(1, 3, 6));
  REQUIRE(traces.size() == 1);
  CHECK(traces[0].state.v == traces[0].state.s);
  CHECK(traces[0].state.a == traces[0].state.s);
}

TEST_CASE("zero parameters and zero input: the zero state is stationary") {
  const CellParams p = CellParams::zeros(2, 2, 3);
  const auto traces = run_sequence(p, Matrix(10, 2));
  for (const auto& tr : traces) {
    CHECK(tr.state.s == Vector(3));
    CHECK(tr.state.h == Vector(3));
    CHECK(tr.state.v == Vector(3));
  }
}

TEST_CASE("constant internal state has zero velocity") {
  // Zero input weights and a closed input gate freeze s at zero.
  CellParams p = CellParams::random(2, 2, 3, 8, 0.5);
  p.w_sx.fill(0);
  p.w_sh.fill(0);
  p.b_s.fill(0);
  const auto traces = run_sequence(p, random_inputs(12, 2, 9));
  for (std::size_t t = 1; t < traces.size(); ++t) CHECK(traces[t].state.v == Vector(3));
}

TEST_CASE("stored derivatives are differences of stored states") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int order = static_cast<int>(rng.below(3));
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6), T = 2 + rng.below(30);
    const CellParams p = CellParams::random(order, m, n, 300 + trial, 1.0);
    const auto traces = run_sequence(p, random_inputs(T, m, 400 + trial, -3, 3));
    for (std::size_t t = 0; t < T; ++t) {
      const Vector zero(n);
      const Vector& s1 = t >= 1 ? traces[t - 1].state.s : zero;
      const Vector& s2 = t >= 2 ? traces[t - 2].state.s : zero;
      const Vector& s0 = traces[t].state.s;
      for (std::size_t r = 0; r < n; ++r) {
        CHECK(std::abs(traces[t].state.v[r] - (s0[r] - s1[r])) <= 1e-14);
        CHECK(std::abs(traces[t].state.a[r] - (s0[r] - 2 * s1[r] + s2[r])) <= 1e-14);
      }
    }
  }
}

TEST_CASE("gates lie in (0,1) and hidden states in (-1,1)") {
  const CellParams p = CellParams::random(2, 4, 5, 12, 1.0);
  for (const auto& tr : run_sequence(p, random_inputs(40, 4, 13, -2, 2))) {
    for (const Vector* g : {&tr.i, &tr.f, &tr.o}) {
      for (double x : *g) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
      }
    }
    for (double x : tr.state.h) CHECK(std::abs(x) < 1.0);
  }
}

TEST_CASE("long runs with bounded weights stay finite") {
  for (int order = 0; order <= 2; ++order) {
    const CellParams p = CellParams::random(order, 3, 4, 50 + order, 1.0);
    const auto traces = run_sequence(p, random_inputs(10000, 3, 60 + order));
    CHECK(traces.size() == 10000);
    CHECK(traces.back().state.s.all_finite());
    CHECK(traces.back().state.a.all_finite());
  }
}

TEST_CASE("cell errors") {
  const CellParams p = CellParams::random(1, 2, 3, 1);
  CHECK_THROWS_AS(run_sequence(p, Matrix(0, 2)), Error);
  CHECK_THROWS_AS(run_sequence(p, Matrix(4, 3)), ShapeError);
  CHECK_THROWS_AS(drnn_step(p, CellState::initial(2), Vector{1, 2}.span()), ShapeError);

  Matrix xs = random_inputs(5, 2, 3);
  xs(3, 1) = INFINITY;
  try {
    run_sequence(p, xs);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.time_index() == 4);
  }

  CellParams bad = p;
  bad.w_od.pop_back();
  CHECK_THROWS(bad.validate());
  CHECK_THROWS_AS(CellParams::zeros(3, 2, 2), ConfigError);
}

TEST_CASE("parameter layout has N+1 derivative matrices per gate") {
  for (int order = 0; order <= 2; ++order) {
    const CellParams p = CellParams::zeros(order, 2, 3);
    std::vector<std::string> names;
    p.for_each_tensor([&](const std::string& name, std::size_t rows, std::size_t cols, auto) {
      names.push_back(name);
      if (name.rfind("W_", 0) == 0 && name.size() == 5 && name[3] == 'd') {
        CHECK(rows == 3);
        CHECK(cols == 3);
      }
    });
    CHECK(names.size() == 12 + 3 * static_cast<std::size_t>(order + 1));
    CHECK(names.back() == "W_od" + std::to_string(order));
  }
}

TEST_CASE("random init is seeded and bounded") {
  const CellParams a = CellParams::random(2, 3, 4, 99), b = CellParams::random(2, 3, 4, 99);
  CHECK(a == b);
  CHECK_FALSE(a == CellParams::random(2, 3, 4, 100));
  a.for_each_tensor([](const std::string&, std::size_t, std::size_t, std::span<const double> d) {
    for (double x : d) {
      CHECK(x >= -0.08);
      CHECK(x < 0.08);
    }
  });
}
