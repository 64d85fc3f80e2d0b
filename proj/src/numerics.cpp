#include "drnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "drnn/error.hpp"

namespace drnn {

namespace {

void require_same_size(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": size mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
}

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

void Vector::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Vector::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Vector& Vector::operator+=(const Vector& other) {
  require_same_size(*this, other, "vector add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vector& Vector::operator-=(const Vector& other) {
  require_same_size(*this, other, "vector subtract");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vector& Vector::operator*=(double scale) {
  for (double& x : data_) x *= scale;
  return *this;
}

Vector operator+(Vector lhs, const Vector& rhs) { return lhs += rhs; }
Vector operator-(Vector lhs, const Vector& rhs) { return lhs -= rhs; }
Vector operator*(double scale, Vector v) { return v *= scale; }

Vector hadamard(const Vector& a, const Vector& b) {
  require_same_size(a, b, "hadamard");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: size mismatch (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double max_abs_diff(const Vector& a, const Vector& b) {
  require_same_size(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("matrix literal: ragged rows");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Vector matvec(const Matrix& m, std::span<const double> v) {
  Vector out(m.rows());
  matvec_add(m, v, out.span());
  return out;
}

void matvec_add(const Matrix& m, std::span<const double> v, std::span<double> out) {
  if (m.cols() != v.size() || m.rows() != out.size()) {
    throw ShapeError("matvec: matrix " + m.shape_string() + " cannot multiply vector of length " +
                     std::to_string(v.size()) + " into length " + std::to_string(out.size()));
  }
  const std::size_t cols = m.cols();
  const double* a = m.span().data();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* row = a + i * cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * v[j];
    out[i] += acc;
  }
}

void matvec_transposed_add(const Matrix& m, std::span<const double> v, std::span<double> out) {
  if (m.rows() != v.size() || m.cols() != out.size()) {
    throw ShapeError("matvec_transposed: matrix " + m.shape_string() +
                     " cannot multiply vector of length " + std::to_string(v.size()) +
                     " into length " + std::to_string(out.size()));
  }
  const std::size_t cols = m.cols();
  const double* a = m.span().data();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    const double* row = a + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j] * vi;
  }
}

void outer_add(Matrix& m, std::span<const double> a, std::span<const double> b) {
  if (m.rows() != a.size() || m.cols() != b.size()) {
    throw ShapeError("outer_add: matrix " + m.shape_string() + " vs outer product " +
                     std::to_string(a.size()) + "x" + std::to_string(b.size()));
  }
  const std::size_t cols = m.cols();
  double* out = m.span().data();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    double* row = out + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += ai * b[j];
  }
}

double sigmoid(double x) noexcept {
  // Branching on the sign keeps exp() from overflowing for large |x|.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector sigmoid(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = sigmoid(v[i]);
  return out;
}

Vector sigmoid_grad(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = sigmoid(v[i]);
    out[i] = s * (1.0 - s);
  }
  return out;
}

Vector tanh_act(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
  return out;
}

Vector tanh_grad(const Vector& v) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = std::tanh(v[i]);
    out[i] = 1.0 - t * t;
  }
  return out;
}

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& word : s_) word = splitmix64(x);
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) noexcept {
  const double x = lo + (hi - lo) * uniform();
  // Rounding can land exactly on hi for wide ranges.
  return x < hi ? x : std::nextafter(hi, lo);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
  // Lemire's rejection keeps the draw unbiased.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Vector rng_uniform(std::uint64_t seed, double lo, double hi, std::size_t n) {
  if (!(lo < hi)) {
    throw ConfigError("rng_uniform: empty range [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + ")");
  }
  Rng rng(seed);
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = rng.uniform(lo, hi);
  return out;
}

}  // namespace drnn
