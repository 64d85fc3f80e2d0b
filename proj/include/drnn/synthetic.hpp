#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "drnn/data.hpp"

namespace drnn {

/// How a synthetic class moves. Every kind shares the same per-sequence
/// level distribution, so the time-averaged position carries no class signal.
enum class Kinematics {
  constant,  // level + noise, zero velocity
  ramp,      // piecewise-linear zigzag: constant speed, sign flips between pieces
  arc,       // piecewise-quadratic arcs: constant |acceleration|, sign alternating
};

std::string_view to_string(Kinematics k);
Kinematics parse_kinematics(std::string_view text);

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::vector<Kinematics> classes{Kinematics::constant, Kinematics::ramp, Kinematics::arc};
  std::size_t per_class = 100;
  std::size_t length = 40;
  std::size_t dim = 8;
  double noise = 0.05;
  /// Peak |offset| of the moving classes around the sequence level.
  double amplitude = 1.0;
  /// Per-dimension sequence levels are uniform in [-level_range, level_range].
  double level_range = 0.25;
  /// Piece length range (frames) for ramps and arcs.
  std::size_t min_piece = 6;
  std::size_t max_piece = 12;

  void validate() const;
};

/// Sequences are emitted class-round-robin (sequence i has class i mod k),
/// all tagged Split::train, with ids "seq_00000", "seq_00001", ...
/// Deterministic for a fixed spec.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Retags sequences train/val/test by a seed-stable shuffle. Fractions are of
/// the whole dataset; the remainder after train and val goes to test.
void assign_splits(Dataset& ds, std::uint64_t seed, double train_fraction = 0.6,
                   double val_fraction = 0.2);

}  // namespace drnn
