#include "drnn/metrics.hpp"

#include <charconv>
#include <numeric>
#include <sstream>

#include "drnn/error.hpp"

namespace drnn {

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= k_ || predicted >= k_) {
    throw ShapeError("confusion matrix: class out of range (" + std::to_string(truth + 1) + ", " +
                     std::to_string(predicted + 1) + ") for " + std::to_string(k_) + " classes");
  }
  ++counts_[truth * k_ + predicted];
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += count(truth, p);
  return s;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t diag = 0;
  for (std::size_t c = 0; c < k_; ++c) diag += count(c, c);
  return static_cast<double>(diag) / static_cast<double>(n);
}

double ConfusionMatrix::recall(std::size_t c) const {
  const std::size_t n = row_sum(c);
  return n == 0 ? 0.0 : static_cast<double>(count(c, c)) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& class_names) const {
  const auto names = class_labels(class_names, k_);
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < k_; ++t) {
    out << names[t];
    for (std::size_t p = 0; p < k_; ++p) out << ',' << count(t, p);
    out << '\n';
  }
  return out.str();
}

Matrix average_counts(std::span<const ConfusionMatrix> folds) {
  if (folds.empty()) throw ShapeError("average_counts: no folds");
  const std::size_t k = folds.front().classes();
  Matrix m(k, k);
  for (const auto& f : folds) {
    if (f.classes() != k) throw ShapeError("average_counts: folds disagree on class count");
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t p = 0; p < k; ++p) m(t, p) += static_cast<double>(f.count(t, p));
    }
  }
  for (double& x : m.span()) x /= static_cast<double>(folds.size());
  return m;
}

Matrix row_normalize(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0;
    for (double x : m.row(r)) s += x;
    if (s > 0) {
      for (double& x : out.row(r)) x /= s;
    }
  }
  return out;
}

std::string matrix_csv(const Matrix& m, const std::vector<std::string>& class_names) {
  const auto names = class_labels(class_names, m.rows());
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < m.rows(); ++t) {
    out << names[t];
    for (double x : m.row(t)) out << ',' << format_number(x);
    out << '\n';
  }
  return out.str();
}

std::vector<std::string> class_labels(const std::vector<std::string>& names, std::size_t k) {
  if (names.size() == k) return names;
  std::vector<std::string> out;
  for (std::size_t c = 0; c < k; ++c) out.push_back(std::to_string(c + 1));
  return out;
}

std::string format_number(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace drnn
