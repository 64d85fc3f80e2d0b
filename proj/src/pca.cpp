#include "drnn/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "drnn/error.hpp"

namespace drnn {

namespace {

struct Eigenpairs {
  Vector mean;
  std::vector<double> values;  // descending
  Eigen::MatrixXd vectors;     // columns match values
};

Eigenpairs decompose(const Matrix& frames) {
  if (frames.rows() < 2) throw ConfigError("PCA needs at least 2 frames");
  if (frames.cols() == 0) throw ConfigError("PCA needs at least one feature");
  const auto rows = static_cast<Eigen::Index>(frames.rows());
  const auto cols = static_cast<Eigen::Index>(frames.cols());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      frames.span().data(), rows, cols);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigendecomposition did not converge");

  Eigenpairs out;
  out.mean = Vector(frames.cols());
  for (Eigen::Index j = 0; j < cols; ++j) out.mean[j] = mu(j);
  // Eigen returns ascending order.
  out.vectors = solver.eigenvectors().rowwise().reverse();
  const Eigen::VectorXd vals = solver.eigenvalues().reverse();
  for (Eigen::Index j = 0; j < cols; ++j) {
    out.values.push_back(std::max(vals(j), 0.0));
    auto col = out.vectors.col(j);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0) col = -col;
  }
  return out;
}

PcaTransform build(const Eigenpairs& eig, std::size_t d) {
  PcaTransform t;
  t.mean = eig.mean;
  t.eigenvalues = eig.values;
  const std::size_t D = eig.values.size();
  t.projection = Matrix(d, D);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      t.projection(i, j) = eig.vectors(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    }
  }
  double total = 0, kept = 0;
  for (std::size_t i = 0; i < D; ++i) {
    total += eig.values[i];
    if (i < d) kept += eig.values[i];
  }
  t.retained = total > 0 ? kept / total : 1.0;
  return t;
}

/// Eigenvalues below this fraction of the largest are numerically zero.
constexpr double kRankTolerance = 1e-12;

std::size_t numerical_rank(const std::vector<double>& values) {
  if (values.empty() || values.front() <= 0) return 0;
  std::size_t r = 0;
  while (r < values.size() && values[r] > kRankTolerance * values.front()) ++r;
  return r;
}

}  // namespace

Vector PcaTransform::project(std::span<const double> frame) const {
  if (frame.size() != input_dim()) {
    throw ShapeError("PCA expects frames of length " + std::to_string(input_dim()) + ", got " +
                     std::to_string(frame.size()));
  }
  Vector centered(frame);
  centered -= mean;
  return matvec(projection, centered);
}

Vector PcaTransform::reconstruct(std::span<const double> coords) const {
  Vector out = mean;
  matvec_transposed_add(projection, coords, out.span());
  return out;
}

Matrix PcaTransform::project_frames(const Matrix& frames) const {
  Matrix out(frames.rows(), output_dim());
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    const Vector p = project(frames.row(t));
    std::copy(p.begin(), p.end(), out.row(t).begin());
  }
  return out;
}

Dataset PcaTransform::apply(const Dataset& ds) const {
  Dataset out = ds;
  out.dim = output_dim();
  for (auto& seq : out.sequences) seq.features = project_frames(seq.features);
  return out;
}

PcaTransform fit_pca(const Matrix& frames, double energy) {
  if (!(energy > 0.0 && energy <= 1.0)) {
    throw ConfigError("PCA energy threshold must be in (0, 1], got " + std::to_string(energy));
  }
  const Eigenpairs eig = decompose(frames);
  const std::size_t rank = numerical_rank(eig.values);
  double total = 0;
  for (double v : eig.values) total += v;
  std::size_t d = 0;
  double kept = 0;
  while (d < rank && (total <= 0 || kept / total < energy)) kept += eig.values[d++];
  // A tiny deficit left by rounding is absorbed by the rank cap.
  return build(eig, std::max<std::size_t>(d, 1));
}

PcaTransform fit_pca_fixed(const Matrix& frames, std::size_t components) {
  if (components == 0 || components > frames.cols()) {
    throw ConfigError("PCA component count must be in [1, " + std::to_string(frames.cols()) + "]");
  }
  return build(decompose(frames), components);
}

Matrix stack_frames(const Dataset& ds) {
  std::size_t rows = 0;
  for (const auto& seq : ds.sequences) rows += seq.length();
  Matrix out(rows, ds.dim);
  std::size_t r = 0;
  for (const auto& seq : ds.sequences) {
    for (std::size_t t = 0; t < seq.length(); ++t, ++r) {
      std::copy(seq.features.row(t).begin(), seq.features.row(t).end(), out.row(r).begin());
    }
  }
  return out;
}

}  // namespace drnn
