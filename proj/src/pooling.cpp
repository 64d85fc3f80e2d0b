#include "drnn/pooling.hpp"

#include <algorithm>
#include <cctype>

#include "drnn/error.hpp"

namespace drnn {

std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::lhs: return "lhs";
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
    case Pooling::sep: return "sep";
  }
  return "?";
}

Pooling parse_pooling(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "lhs") return Pooling::lhs;
  if (lower == "mean") return Pooling::mean;
  if (lower == "max") return Pooling::max;
  if (lower == "sep") return Pooling::sep;
  throw ConfigError("unknown pooling strategy '" + std::string(text) +
                    "' (expected lhs, mean, max or sep)");
}

EnergyProfile energy_profile(std::span<const StepTrace> traces, int order, int cell_order) {
  if (traces.empty()) throw ShapeError("energy_profile: empty trace");
  if (order < 0 || order > cell_order) {
    throw ConfigError("energy profile of order " + std::to_string(order) +
                      " requested from a cell of order " + std::to_string(cell_order));
  }
  EnergyProfile e;
  e.order = order;
  e.values.reserve(traces.size());
  for (const auto& tr : traces) e.values.push_back(norm2(tr.state.dos(order).span()));
  return e;
}

std::vector<std::size_t> find_landmarks(std::span<const double> e) {
  std::vector<std::size_t> out;
  const std::size_t T = e.size();
  std::size_t t = 1;
  while (t + 1 < T) {
    if (!(e[t - 1] < e[t])) {
      ++t;
      continue;
    }
    // Rising edge into t; walk the plateau.
    std::size_t end = t;
    while (end + 1 < T && e[end + 1] == e[t]) ++end;
    if (end + 1 < T && e[end + 1] < e[t]) out.push_back(t);
    t = end + 1;
  }
  return out;
}

PooledRepresentation pool(std::span<const StepTrace> traces, const PoolOptions& opts,
                          int cell_order) {
  if (traces.empty()) throw ShapeError("pool: empty trace");
  const std::size_t T = traces.size();
  const std::size_t n = traces.front().state.h.size();
  PooledRepresentation out;
  out.strategy = opts.strategy;

  switch (opts.strategy) {
    case Pooling::lhs:
      out.indices = {T - 1};
      break;
    case Pooling::mean:
      for (std::size_t t = 0; t < T; ++t) out.indices.push_back(t);
      break;
    case Pooling::max: {
      out.h = traces.front().state.h;
      out.indices.assign(n, 0);
      for (std::size_t t = 1; t < T; ++t) {
        const Vector& h = traces[t].state.h;
        for (std::size_t j = 0; j < n; ++j) {
          if (h[j] > out.h[j]) {
            out.h[j] = h[j];
            out.indices[j] = t;
          }
        }
      }
      return out;
    }
    case Pooling::sep: {
      if (opts.sep_orders.empty()) throw ConfigError("SEP pooling needs at least one order");
      for (int order : opts.sep_orders) {
        const EnergyProfile e = energy_profile(traces, order, cell_order);
        const auto marks = find_landmarks(e.values);
        out.indices.insert(out.indices.end(), marks.begin(), marks.end());
      }
      out.indices.push_back(T - 1);
      if (opts.sep_dedup) {
        std::sort(out.indices.begin(), out.indices.end());
        out.indices.erase(std::unique(out.indices.begin(), out.indices.end()), out.indices.end());
      }
      break;
    }
  }

  if (out.indices.size() == 1) {
    out.h = traces[out.indices.front()].state.h;
    return out;
  }
  out.h = Vector(n);
  for (std::size_t t : out.indices) out.h += traces[t].state.h;
  out.h *= 1.0 / static_cast<double>(out.indices.size());
  return out;
}

}  // namespace drnn
