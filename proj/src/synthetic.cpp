#include "drnn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace drnn {

namespace {

/// Removes the least-squares line through (t, x_t). Differences of order two
/// and up are unchanged; first differences shift by a constant.
void detrend(std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mt = 0, mx = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    mt += static_cast<double>(t);
    mx += x[t];
  }
  mt /= n;
  mx /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double dt = static_cast<double>(t) - mt;
    sxy += dt * (x[t] - mx);
    sxx += dt * dt;
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) x[t] -= mx + slope * (static_cast<double>(t) - mt);
}

/// +1 or -1, flipping every `piece` frames starting from `phase`.
double square_wave(std::size_t t, std::size_t piece, std::size_t phase) {
  return ((t + phase) / piece) % 2 == 0 ? 1.0 : -1.0;
}

std::vector<double> motion(Kinematics kind, const SyntheticSpec& spec, Rng& rng) {
  const std::size_t T = spec.length;
  std::vector<double> x(T, 0.0);
  if (kind == Kinematics::constant) return x;

  const std::size_t piece =
      spec.min_piece + static_cast<std::size_t>(rng.below(spec.max_piece - spec.min_piece + 1));
  const std::size_t phase = static_cast<std::size_t>(rng.below(piece));
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;

  if (kind == Kinematics::ramp) {
    for (std::size_t t = 1; t < T; ++t) x[t] = x[t - 1] + sign * square_wave(t, piece, phase);
  } else {
    double v = 0.0;
    for (std::size_t t = 1; t < T; ++t) {
      v += sign * square_wave(t, piece, phase);
      x[t] = x[t - 1] + v;
    }
  }
  detrend(x);
  double peak = 0.0;
  for (double xi : x) peak = std::max(peak, std::abs(xi));
  if (peak > 0.0) {
    for (double& xi : x) xi *= spec.amplitude / peak;
  }
  return x;
}

}  // namespace

std::string_view to_string(Kinematics k) {
  switch (k) {
    case Kinematics::constant: return "constant";
    case Kinematics::ramp: return "ramp";
    case Kinematics::arc: return "arc";
  }
  return "?";
}

Kinematics parse_kinematics(std::string_view text) {
  if (text == "constant") return Kinematics::constant;
  if (text == "ramp") return Kinematics::ramp;
  if (text == "arc") return Kinematics::arc;
  throw ConfigError("unknown class kinematics '" + std::string(text) +
                    "' (expected constant, ramp or arc)");
}

void SyntheticSpec::validate() const {
  if (classes.size() < 2) throw ConfigError("synthetic data needs at least 2 classes");
  auto sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("synthetic classes must have distinct kinematics");
  }
  if (per_class == 0) throw ConfigError("synthetic data needs at least one sequence per class");
  if (length < 8) throw ConfigError("synthetic sequences need at least 8 frames");
  if (dim == 0) throw ConfigError("synthetic feature dim must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be non-negative");
  if (!(amplitude > 0.0) || !std::isfinite(amplitude)) throw ConfigError("amplitude must be positive");
  if (!(level_range >= 0.0) || !std::isfinite(level_range)) {
    throw ConfigError("level range must be non-negative");
  }
  if (min_piece < 2 || max_piece < min_piece) throw ConfigError("invalid piece length range");
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.dim = spec.dim;
  ds.classes = spec.classes.size();
  for (auto k : spec.classes) ds.class_names.emplace_back(to_string(k));

  Rng rng(spec.seed);
  const std::size_t total = spec.per_class * ds.classes;
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t c = i % ds.classes;
    LabeledSequence seq;
    char id[32];
    std::snprintf(id, sizeof id, "seq_%05zu", i);
    seq.id = id;
    seq.label = Label::sequence(c);
    seq.features = Matrix(spec.length, spec.dim);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      const double level = rng.uniform(-spec.level_range, spec.level_range);
      const auto offsets = motion(spec.classes[c], spec, rng);
      for (std::size_t t = 0; t < spec.length; ++t) seq.features(t, d) = level + offsets[t];
    }
    if (spec.noise > 0.0) {
      for (double& x : seq.features.span()) x += spec.noise * rng.normal();
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

void assign_splits(Dataset& ds, std::uint64_t seed, double train_fraction, double val_fraction) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  // Stratified: each class is shuffled and cut separately.
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& label = ds.sequences[i].label;
    by_class[label.is_frame_level() ? label.frame_classes().front() : label.sequence_class()].push_back(i);
  }
  Rng rng(seed ^ 0x5bd1e995ULL);
  for (auto& [cls, members] : by_class) {
    rng.shuffle(members);
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
    const auto n_val = std::min(members.size() - n_train,
                                static_cast<std::size_t>(std::llround(val_fraction * n)));
    for (std::size_t j = 0; j < members.size(); ++j) {
      ds.sequences[members[j]].split = j < n_train ? Split::train
                                       : j < n_train + n_val ? Split::val
                                                             : Split::test;
    }
  }
}

}  // namespace drnn
