#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "drnn/numerics.hpp"

namespace drnn {

/// k x k counts; row = true class, column = predicted class (both 0-based).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : k_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return k_; }
  void add(std::size_t truth, std::size_t predicted);
  std::size_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::size_t row_sum(std::size_t truth) const;
  std::size_t total() const;
  /// trace / total; 0 for an empty matrix.
  double accuracy() const;
  /// Diagonal over row sum; 0 for a class with no examples.
  double recall(std::size_t c) const;

  /// Header `true\predicted,<names...>`, then one row per true class.
  std::string to_csv(const std::vector<std::string>& class_names) const;

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
};

/// Element-wise mean of the raw counts across folds.
Matrix average_counts(std::span<const ConfusionMatrix> folds);
/// Each row divided by its sum (zero rows stay zero).
Matrix row_normalize(const Matrix& m);
std::string matrix_csv(const Matrix& m, const std::vector<std::string>& class_names);

/// Class names for CSV headers: the given names, or "1".."k".
std::vector<std::string> class_labels(const std::vector<std::string>& names, std::size_t k);

/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

}  // namespace drnn
