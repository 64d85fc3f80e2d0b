#pragma once

#include <cstddef>
#include <vector>

#include "drnn/data.hpp"
#include "drnn/numerics.hpp"

namespace drnn {

/// Projection onto the leading principal components of a set of frames.
struct PcaTransform {
  Vector mean;                     // D
  Matrix projection;               // d x D, rows are unit eigenvectors
  std::vector<double> eigenvalues; // all D covariance eigenvalues, descending
  double retained = 0.0;           // retained fraction of total variance

  std::size_t input_dim() const { return projection.cols(); }
  std::size_t output_dim() const { return projection.rows(); }

  Vector project(std::span<const double> frame) const;
  /// Maps a projected frame back into the input space.
  Vector reconstruct(std::span<const double> coords) const;
  Matrix project_frames(const Matrix& frames) const;
  /// Every sequence projected; dim becomes output_dim().
  Dataset apply(const Dataset& ds) const;
};

/// Covariance is normalized by (frames - 1). Components are kept until their
/// eigenvalues reach `energy` of the total. Each eigenvector is signed so
/// that its largest-magnitude entry is positive. Rank deficiency caps d at
/// the number of nonzero eigenvalues.
PcaTransform fit_pca(const Matrix& frames, double energy);
/// Keeps exactly `components` leading directions.
PcaTransform fit_pca_fixed(const Matrix& frames, std::size_t components);

/// All frames of all sequences stacked into one matrix.
Matrix stack_frames(const Dataset& ds);

}  // namespace drnn
