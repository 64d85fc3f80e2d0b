#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drnn/cell.hpp"
#include "drnn/numerics.hpp"

namespace drnn {

enum class Pooling { lhs, mean, max, sep };

std::string_view to_string(Pooling p);
/// Accepts "lhs", "mean", "max", "sep" (case-insensitive).
Pooling parse_pooling(std::string_view text);

/// Per-step L2 norm of one derivative order of the internal state.
struct EnergyProfile {
  int order = 0;
  std::vector<double> values;
};

/// values[t] = ||dos(order) at step t||. Throws ConfigError if order exceeds
/// the order the cell was run with.
EnergyProfile energy_profile(std::span<const StepTrace> traces, int order, int cell_order);

/// Interior local maxima, 0-based. A strict peak qualifies; on a plateau that
/// rises into it and falls out of it, only its first index is reported.
/// The endpoints are never landmarks.
std::vector<std::size_t> find_landmarks(std::span<const double> profile);

struct PoolOptions {
  Pooling strategy = Pooling::sep;
  /// Derivative orders whose landmarks feed SEP pooling.
  std::vector<int> sep_orders{0, 1, 2};
  /// Count a time step once even when several orders select it.
  bool sep_dedup = false;
};

struct PooledRepresentation {
  Vector h;
  Pooling strategy = Pooling::lhs;
  /// For lhs/mean/sep: the (multi)set of time steps averaged into h.
  /// For max: the argmax time step of each component.
  std::vector<std::size_t> indices;
};

/// Reduce the hidden states of a trace to a single vector.
PooledRepresentation pool(std::span<const StepTrace> traces, const PoolOptions& opts,
                          int cell_order);

}  // namespace drnn
