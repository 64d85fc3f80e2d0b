#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "drnn/model.hpp"
#include "drnn/synthetic.hpp"
#include "drnn/train.hpp"

namespace drnn::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kDataError = 3,
  kNumericFailure = 4,
  kCheckFailed = 5,
};

/// Everything a command needs, merged from a JSON config file and flags.
///
/// JSON layout (every section and key optional, unknown keys rejected):
///   { "seed": 1,
///     "model":    { "state_dim", "order", "pooling", "sep_orders", "sep_dedup",
///                   "output_tanh", "init_scale" },
///     "train":    { "lr", "epochs", "bptt", "shuffle", "clip_norm" },
///     "generate": { "classes", "per_class", "length", "dim", "noise",
///                   "amplitude", "level_range", "min_piece", "max_piece",
///                   "train_fraction", "val_fraction" },
///     "eval":     { "split", "folds" },
///     "paths":    { "manifest", "checkpoint", "out" } }
struct RunConfig {
  std::uint64_t seed = 1;

  std::size_t state_dim = 16;
  int order = 2;
  Pooling pooling = Pooling::sep;
  std::vector<int> sep_orders;
  bool sep_dedup = false;
  bool output_tanh = true;
  double init_scale = 0.08;

  TrainConfig train;

  SyntheticSpec synthetic;
  double train_fraction = 0.6;
  double val_fraction = 0.2;

  Split eval_split = Split::test;
  std::size_t folds = 0;

  std::string manifest;
  std::string checkpoint;
  std::string out;

  /// Checks every field; throws ConfigError.
  void validate() const;
  ModelConfig model_config(std::size_t input_dim, std::size_t classes) const;
  /// Copies carrying the shared seed.
  TrainConfig train_config() const;
  SyntheticSpec synthetic_spec() const;
};

RunConfig parse_run_config(std::string_view json_text, const std::string& source = "config");
RunConfig load_run_config(const std::filesystem::path& path);

/// Report directory used when neither --out nor paths.out is given.
std::filesystem::path default_report_dir();
inline constexpr const char* kReportDirEnv = "DRNN_REPORT_DIR";

/// Entry point; args excludes the program name. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Maps a library exception to its exit code.
int exit_code_for(const std::exception& e);

}  // namespace drnn::cli
