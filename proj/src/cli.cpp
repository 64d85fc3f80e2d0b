#include "drnn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <initializer_list>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "drnn/checkpoint.hpp"
#include "drnn/data.hpp"
#include "drnn/error.hpp"
#include "drnn/metrics.hpp"
#include "drnn/pca.hpp"
#include "drnn/pooling.hpp"

namespace drnn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config file

class Section {
 public:
  Section(const json& obj, std::string name, std::initializer_list<std::string_view> allowed)
      : obj_(obj), name_(std::move(name)) {
    if (!obj_.is_object()) throw ConfigError("config section '" + label("") + "' must be an object");
    for (const auto& [key, value] : obj_.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        throw ConfigError("unknown config key '" + label(key) + "'");
      }
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& at(const char* key) const { return obj_.at(key); }

  void get(const char* key, std::size_t& dst) const {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_number_unsigned()) fail(key, "a non-negative integer");
    dst = v.get<std::size_t>();
  }
  void get(const char* key, int& dst) const {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_number_integer()) fail(key, "an integer");
    dst = v.get<int>();
  }
  void get(const char* key, double& dst) const {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_number()) fail(key, "a number");
    dst = v.get<double>();
  }
  void get(const char* key, bool& dst) const {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_boolean()) fail(key, "true or false");
    dst = v.get<bool>();
  }
  void get(const char* key, std::string& dst) const {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_string()) fail(key, "a string");
    dst = v.get<std::string>();
  }
  void get(const char* key, std::vector<int>& dst) const {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_array()) fail(key, "an array of integers");
    dst.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(key, "an array of integers");
      dst.push_back(e.get<int>());
    }
  }
  void get(const char* key, std::vector<std::string>& dst) const {
    if (!has(key)) return;
    const auto& v = at(key);
    if (!v.is_array()) fail(key, "an array of strings");
    dst.clear();
    for (const auto& e : v) {
      if (!e.is_string()) fail(key, "an array of strings");
      dst.push_back(e.get<std::string>());
    }
  }

 private:
  std::string label(std::string_view key) const {
    if (name_.empty()) return std::string(key);
    return key.empty() ? name_ : name_ + "." + std::string(key);
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError("config key '" + label(key) + "' must be " + expected);
  }

  const json& obj_;
  std::string name_;
};

// ---------------------------------------------------------------------------
// Flag overrides

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> order;
  std::optional<std::string> pooling;
  std::optional<std::string> bptt;
  std::optional<double> lr;
  std::optional<int> epochs;
  std::optional<std::string> out;

  std::optional<std::string> manifest;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> state_dim;
  std::optional<double> init_scale;
  std::optional<double> clip_norm;

  std::optional<std::size_t> per_class;
  std::optional<std::size_t> length;
  std::optional<std::size_t> dim;
  std::optional<double> noise;

  std::optional<std::string> split;
  std::optional<std::size_t> folds;

  std::string sequence;

  std::optional<double> energy;
  std::optional<std::size_t> components;

  std::size_t gc_input_dim = 3;
  std::size_t gc_state_dim = 4;
  std::size_t gc_classes = 2;
  std::size_t gc_length = 8;
  std::size_t gc_seeds = 1;
  std::optional<std::string> inject_fault;
};

void add_shared(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--order", f.order, "Derivative-of-state order (0, 1 or 2)");
  cmd->add_option("--pooling", f.pooling, "lhs, mean, max or sep");
  cmd->add_option("--bptt", f.bptt, "full or truncated");
  cmd->add_option("--lr", f.lr, "Learning rate");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--out", f.out, "Output directory");
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.order) cfg.order = *f.order;
  if (f.pooling) cfg.pooling = parse_pooling(*f.pooling);
  if (f.bptt) cfg.train.bptt = parse_bptt(*f.bptt);
  if (f.lr) cfg.train.learning_rate = *f.lr;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.out) cfg.out = *f.out;
  if (f.manifest) cfg.manifest = *f.manifest;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  if (f.state_dim) cfg.state_dim = *f.state_dim;
  if (f.init_scale) cfg.init_scale = *f.init_scale;
  if (f.clip_norm) cfg.train.clip_norm = *f.clip_norm;
  if (f.per_class) cfg.synthetic.per_class = *f.per_class;
  if (f.length) cfg.synthetic.length = *f.length;
  if (f.dim) cfg.synthetic.dim = *f.dim;
  if (f.noise) cfg.synthetic.noise = *f.noise;
  if (f.split) {
    try {
      cfg.eval_split = parse_split(*f.split);
    } catch (const DataError& e) {
      throw ConfigError(std::string("--split: ") + e.what());
    }
  }
  if (f.folds) cfg.folds = *f.folds;
  if (cfg.out.empty()) cfg.out = default_report_dir().string();
  cfg.validate();
  return cfg;
}

fs::path require_manifest(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("no dataset manifest given (--manifest or paths.manifest)");
  return cfg.manifest;
}

fs::path checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? fs::path(cfg.out) / "checkpoint.bin" : fs::path(cfg.checkpoint);
}

void check_compatible(const Model& model, const Dataset& ds) {
  if (model.config.classes != ds.classes) {
    throw DataError(DataError::Code::class_mismatch,
                    "class-count mismatch: checkpoint has " + std::to_string(model.config.classes) +
                        " classes, dataset has " + std::to_string(ds.classes));
  }
  if (model.config.input_dim != ds.dim) {
    throw DataError(DataError::Code::dim_mismatch,
                    "feature-dim mismatch: checkpoint expects " + std::to_string(model.config.input_dim) +
                        ", dataset has " + std::to_string(ds.dim));
  }
}

std::string join_header(std::string_view prefix, const std::vector<std::string>& names) {
  std::string s;
  for (const auto& n : names) {
    s += ',';
    s += prefix;
    s += n;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation shared by eval and cross-validation

struct EvalOutput {
  ConfusionMatrix confusion;
  double mean_loss = 0.0;
  std::string predictions_csv;
};

EvalOutput evaluate_split(const Model& model, const Dataset& part, const std::vector<std::string>& names) {
  EvalOutput r{ConfusionMatrix(model.config.classes), 0.0, {}};
  std::ostringstream csv;
  csv << "id,t,true" << join_header("p_", names) << ",predicted\n";
  auto row = [&](const std::string& id, const std::string& t, std::size_t truth, const Prediction& p) {
    csv << id << ',' << t << ',' << truth + 1;
    for (double x : p.p.span()) csv << ',' << format_number(x);
    csv << ',' << p.argmax() + 1 << '\n';
    r.confusion.add(truth, p.argmax());
  };
  for (const auto& seq : part.sequences) {
    if (seq.label.is_frame_level()) {
      const auto preds = predict_frames(model, seq.features);
      const auto& labels = seq.label.frame_classes();
      r.mean_loss += frame_loss(preds, labels);
      for (std::size_t t = 0; t < preds.size(); ++t) row(seq.id, std::to_string(t + 1), labels[t], preds[t]);
    } else {
      const auto pred = predict_sequence(model, seq.features);
      r.mean_loss += sequence_loss(pred, seq.label.sequence_class());
      row(seq.id, "", seq.label.sequence_class(), pred);
    }
  }
  if (!part.empty()) r.mean_loss /= static_cast<double>(part.size());
  r.predictions_csv = csv.str();
  return r;
}

std::string metrics_csv(const ConfusionMatrix& cm, double mean_loss, std::size_t sequences,
                        const std::vector<std::string>& names) {
  std::ostringstream m;
  m << "metric,value\n";
  m << "sequences," << sequences << '\n';
  m << "examples," << cm.total() << '\n';
  m << "accuracy," << format_number(cm.accuracy()) << '\n';
  m << "mean_loss," << format_number(mean_loss) << '\n';
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    m << "recall_" << names[c] << ',' << format_number(cm.recall(c)) << '\n';
  }
  return m.str();
}

std::size_t stratum(const LabeledSequence& seq) {
  return seq.label.is_frame_level() ? seq.label.frame_classes().front() : seq.label.sequence_class();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  Dataset ds = gen_synthetic(cfg.synthetic_spec());
  assign_splits(ds, cfg.seed, cfg.train_fraction, cfg.val_fraction);
  const fs::path manifest = save_dataset(ds, cfg.out);
  out << "wrote " << ds.size() << " sequences (train " << ds.subset(Split::train).size() << ", val "
      << ds.subset(Split::val).size() << ", test " << ds.subset(Split::test).size() << ") to "
      << manifest.string() << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_dataset(require_manifest(cfg));
  const Dataset train_set = ds.subset(Split::train);
  const Dataset val_set = ds.subset(Split::val);
  if (train_set.empty()) throw DataError(DataError::Code::no_sequences, "manifest has no train sequences");
  const ModelConfig mc = cfg.model_config(ds.dim, ds.classes);
  const TrainConfig tc = cfg.train_config();
  Model model = Model::random(mc, cfg.seed, cfg.init_scale);

  const fs::path dir = cfg.out;
  const fs::path ckpt = checkpoint_path(cfg);
  std::string log = "epoch,mean_loss,train_accuracy,val_accuracy\n";
  std::string timing = "epoch,wall_seconds\n";
  EpochRecord best;
  train(model, train_set, val_set, tc, [&](const EpochRecord& rec, bool improved) {
    if (improved) {
      best = rec;
      save_checkpoint(model, ckpt);
    }
    log += std::to_string(rec.epoch) + ',' + format_number(rec.mean_loss) + ',' +
           format_number(rec.train_accuracy) + ',' + format_number(rec.val_accuracy) + '\n';
    timing += std::to_string(rec.epoch) + ',' + format_number(rec.wall_seconds) + '\n';
    write_file_atomic(dir / "train_log.csv", log);
    write_file_atomic(dir / "train_timing.csv", timing);
    out << "epoch " << rec.epoch << '/' << tc.epochs << " loss " << format_number(rec.mean_loss)
        << " train_acc " << format_number(rec.train_accuracy) << " val_acc "
        << format_number(rec.val_accuracy) << (improved ? " *" : "") << '\n';
  });
  log += "# best_epoch=" + std::to_string(best.epoch) + " best_val_accuracy=" +
         format_number(best.val_accuracy) + '\n';
  write_file_atomic(dir / "train_log.csv", log);
  out << "best epoch " << best.epoch << ", checkpoint " << ckpt.string() << '\n';
  return kOk;
}

int cmd_eval_cv(const RunConfig& cfg, const Dataset& ds, std::ostream& out) {
  if (cfg.folds < 2 || cfg.folds > ds.size()) {
    throw ConfigError("cross-validation needs between 2 and " + std::to_string(ds.size()) + " folds");
  }
  const auto names = class_labels(ds.class_names, ds.classes);

  // Stratified, seed-stable fold assignment.
  std::vector<std::vector<std::size_t>> by_class(ds.classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[stratum(ds.sequences[i])].push_back(i);
  Rng rng(cfg.seed ^ 0xc2b2ae3d27d4eb4fULL);
  std::vector<std::size_t> fold_of(ds.size());
  std::size_t next = 0;
  for (auto& members : by_class) {
    rng.shuffle(members);
    for (std::size_t i : members) fold_of[i] = next++ % cfg.folds;
  }

  const fs::path dir = cfg.out;
  std::vector<ConfusionMatrix> folds;
  std::ostringstream summary;
  summary << "fold,examples,accuracy\n";
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    Dataset train_set = ds, test_set = ds;
    train_set.sequences.clear();
    test_set.sequences.clear();
    for (std::size_t i = 0; i < ds.size(); ++i) {
      (fold_of[i] == f ? test_set : train_set).sequences.push_back(ds.sequences[i]);
    }
    TrainConfig tc = cfg.train_config();
    tc.seed = cfg.seed + f;
    Model model = Model::random(cfg.model_config(ds.dim, ds.classes), tc.seed, cfg.init_scale);
    train(model, train_set, Dataset{}, tc);
    auto r = evaluate_split(model, test_set, names);
    const fs::path fold_dir = dir / ("fold_" + std::to_string(f + 1));
    write_file_atomic(fold_dir / "confusion.csv", r.confusion.to_csv(names));
    write_file_atomic(fold_dir / "metrics.csv", metrics_csv(r.confusion, r.mean_loss, test_set.size(), names));
    write_file_atomic(fold_dir / "predictions.csv", r.predictions_csv);
    summary << f + 1 << ',' << r.confusion.total() << ',' << format_number(r.confusion.accuracy()) << '\n';
    out << "fold " << f + 1 << '/' << cfg.folds << " accuracy " << format_number(r.confusion.accuracy()) << '\n';
    folds.push_back(std::move(r.confusion));
  }

  const Matrix mean = average_counts(folds);
  const Matrix normalized = row_normalize(mean);
  double trace = 0, total = 0;
  for (std::size_t t = 0; t < mean.rows(); ++t) {
    for (std::size_t p = 0; p < mean.cols(); ++p) {
      total += mean(t, p);
      if (t == p) trace += mean(t, p);
    }
  }
  const double accuracy = total > 0 ? trace / total : 0.0;
  summary << "mean," << format_number(total) << ',' << format_number(accuracy) << '\n';
  write_file_atomic(dir / "confusion_mean.csv", matrix_csv(mean, names));
  write_file_atomic(dir / "confusion_mean_normalized.csv", matrix_csv(normalized, names));
  write_file_atomic(dir / "cv_summary.csv", summary.str());
  out << "cross-validated accuracy " << format_number(accuracy) << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_dataset(require_manifest(cfg));
  if (cfg.folds > 0) return cmd_eval_cv(cfg, ds, out);

  const Model model = load_checkpoint(checkpoint_path(cfg));
  check_compatible(model, ds);
  const Dataset part = ds.subset(cfg.eval_split);
  if (part.empty()) {
    throw DataError(DataError::Code::no_sequences,
                    "manifest has no " + std::string(to_string(cfg.eval_split)) + " sequences");
  }
  const auto names = class_labels(ds.class_names, ds.classes);
  const auto r = evaluate_split(model, part, names);
  const fs::path dir = cfg.out;
  write_file_atomic(dir / "confusion.csv", r.confusion.to_csv(names));
  write_file_atomic(dir / "metrics.csv", metrics_csv(r.confusion, r.mean_loss, part.size(), names));
  write_file_atomic(dir / "predictions.csv", r.predictions_csv);
  out << to_string(cfg.eval_split) << " accuracy " << format_number(r.confusion.accuracy()) << " over "
      << r.confusion.total() << " examples\n";
  for (std::size_t c = 0; c < ds.classes; ++c) {
    out << "  recall " << names[c] << ' ' << format_number(r.confusion.recall(c)) << '\n';
  }
  return kOk;
}

int cmd_trace(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  if (f.sequence.empty()) throw ConfigError("trace needs --sequence");
  const Model model = load_checkpoint(checkpoint_path(cfg));
  const SequenceFile sf = read_sequence_any(f.sequence);
  if (sf.features.cols() != model.config.input_dim) {
    throw DataError(DataError::Code::dim_mismatch,
                    f.sequence + ": " + std::to_string(sf.features.cols()) + " features per frame, checkpoint expects " +
                        std::to_string(model.config.input_dim));
  }
  const std::size_t T = sf.features.rows();
  const auto names = class_labels({}, model.config.classes);
  const auto preds = predict_frames(model, sf.features);
  std::ostringstream frames;
  frames << "t" << join_header("p_", names) << ",predicted\n";
  for (std::size_t t = 0; t < T; ++t) {
    frames << t + 1;
    for (double x : preds[t].p.span()) frames << ',' << format_number(x);
    frames << ',' << preds[t].argmax() + 1 << '\n';
  }

  const auto traces = run_sequence(model.cell, sf.features);
  std::vector<std::vector<double>> energy(kMaxDosOrder + 1);
  std::vector<std::vector<bool>> landmark(kMaxDosOrder + 1);
  for (int n = 0; n <= model.config.order; ++n) {
    energy[n] = energy_profile(traces, n, model.config.order).values;
    landmark[n].assign(T, false);
    for (std::size_t i : find_landmarks(energy[n])) landmark[n][i] = true;
  }
  std::ostringstream sep;
  sep << "t,E0,E1,E2,landmark_0,landmark_1,landmark_2\n";
  for (std::size_t t = 0; t < T; ++t) {
    sep << t + 1;
    for (int n = 0; n <= kMaxDosOrder; ++n) {
      sep << ',';
      if (!energy[n].empty()) sep << format_number(energy[n][t]);
    }
    for (int n = 0; n <= kMaxDosOrder; ++n) {
      sep << ',';
      if (!energy[n].empty()) sep << (landmark[n][t] ? 1 : 0);
    }
    sep << '\n';
  }
  const fs::path dir = cfg.out;
  write_file_atomic(dir / "frames.csv", frames.str());
  write_file_atomic(dir / "sep.csv", sep.str());
  out << "traced " << T << " frames into " << (dir / "frames.csv").string() << " and "
      << (dir / "sep.csv").string() << '\n';
  return kOk;
}

int cmd_pca(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  const Dataset ds = load_dataset(require_manifest(cfg));
  Dataset fit_on = ds.subset(Split::train);
  if (fit_on.empty()) fit_on = ds;
  const Matrix frames = stack_frames(fit_on);
  const PcaTransform pca =
      f.components ? fit_pca_fixed(frames, *f.components) : fit_pca(frames, f.energy.value_or(0.9));
  const fs::path dir = cfg.out;
  save_dataset(pca.apply(ds), dir);

  std::ostringstream csv;
  csv << "component,eigenvalue,cumulative_fraction,retained\n";
  double total = 0, running = 0;
  for (double l : pca.eigenvalues) total += std::max(l, 0.0);
  for (std::size_t i = 0; i < pca.eigenvalues.size(); ++i) {
    running += std::max(pca.eigenvalues[i], 0.0);
    csv << i + 1 << ',' << format_number(pca.eigenvalues[i]) << ','
        << format_number(total > 0 ? running / total : 1.0) << ',' << (i < pca.output_dim() ? 1 : 0) << '\n';
  }
  write_file_atomic(dir / "pca.csv", csv.str());
  out << "reduced " << pca.input_dim() << " -> " << pca.output_dim() << " dims, retained "
      << format_number(pca.retained) << " of the variance\n";
  return kOk;
}

ModelConfig small_config(const Flags& f, int order, Pooling pooling) {
  ModelConfig c;
  c.input_dim = f.gc_input_dim;
  c.state_dim = f.gc_state_dim;
  c.classes = f.gc_classes;
  c.order = order;
  c.pooling = pooling;
  return c;
}

int cmd_gradcheck(const RunConfig& cfg, const Flags& f, std::ostream& out) {
  if (cfg.train.bptt == Bptt::truncated) {
    throw ConfigError(
        "gradcheck compares full-BPTT gradients with finite differences of the loss; truncated gradients "
        "drop adjoint paths on purpose and are not derivatives of the loss, so --bptt truncated is rejected");
  }
  auto bounded = [](std::size_t v, const char* what) {
    if (v < 1 || v > 8) throw ConfigError(std::string("gradcheck: ") + what + " must be in [1, 8]");
  };
  bounded(f.gc_input_dim, "--input-dim");
  bounded(f.gc_state_dim, "--state-dim");
  bounded(f.gc_length, "--length");
  if (f.gc_classes < 2 || f.gc_classes > 8) throw ConfigError("gradcheck: --classes must be in [2, 8]");
  if (f.gc_seeds < 1) throw ConfigError("gradcheck: --seeds must be at least 1");

  std::vector<int> orders{0, 1, 2};
  if (f.order) orders = {*f.order};
  std::vector<Pooling> poolings{Pooling::lhs, Pooling::mean, Pooling::max, Pooling::sep};
  if (f.pooling) poolings = {cfg.pooling};
  std::vector<std::size_t> lengths;
  for (std::size_t t : {std::size_t{1}, std::size_t{3}, std::size_t{8}}) {
    if (t < f.gc_length) lengths.push_back(t);
  }
  lengths.push_back(f.gc_length);

  GradCheckOptions opts;
  opts.corrupt_tensor = f.inject_fault;
  if (opts.corrupt_tensor) {
    bool found = false;
    Model::zeros(small_config(f, 2, Pooling::sep)).for_each_tensor([&](const std::string& name, std::size_t, std::size_t, auto) {
      found = found || name == *opts.corrupt_tensor;
    });
    if (!found) throw ConfigError("--inject-fault: no tensor named '" + *opts.corrupt_tensor + "'");
  }

  std::ostringstream csv;
  csv << "order,pooling,length,seed,tensor,entries,max_rel_error,passed\n";
  std::size_t runs = 0, failures = 0;
  double worst = 0.0;
  for (int order : orders) {
    for (Pooling pooling : poolings) {
      for (std::size_t T : lengths) {
        for (std::size_t s = 0; s < f.gc_seeds; ++s) {
          const std::uint64_t seed = cfg.seed + s;
          const Model model = Model::random(small_config(f, order, pooling), seed, 0.5);
          Rng rng(seed * 0x2545f4914f6cdd1dULL + T);
          Matrix xs(T, f.gc_input_dim);
          for (double& x : xs.span()) x = rng.uniform(-1.0, 1.0);
          const Label label{rng.below(f.gc_classes)};
          const auto report = grad_check(model, xs, label, opts);
          ++runs;
          if (!report.passed) ++failures;
          for (const auto& t : report.tensors) {
            if (t.entries == 0) continue;
            worst = std::max(worst, t.max_rel_error);
            csv << order << ',' << to_string(pooling) << ',' << T << ',' << seed << ',' << t.name << ','
                << t.entries << ',' << format_number(t.max_rel_error) << ',' << (t.passed ? 1 : 0) << '\n';
          }
          if (!report.passed) {
            out << "FAIL order " << order << " pooling " << to_string(pooling) << " T " << T << " seed " << seed
                << '\n';
          }
        }
      }
    }
  }
  write_file_atomic(fs::path(cfg.out) / "gradcheck.csv", csv.str());
  out << runs - failures << '/' << runs << " configurations passed at tolerance "
      << format_number(opts.tolerance) << ", worst relative error " << format_number(worst) << '\n';
  return failures == 0 ? kOk : kCheckFailed;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  if (state_dim == 0) throw ConfigError("state_dim must be positive");
  if (!(init_scale > 0.0) || !std::isfinite(init_scale)) throw ConfigError("init_scale must be positive");
  ModelConfig probe = model_config(1, 2);
  probe.validate();
  train_config().validate();
  synthetic_spec().validate();
  if (!(train_fraction >= 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  if (folds == 1) throw ConfigError("cross-validation needs at least 2 folds");
}

ModelConfig RunConfig::model_config(std::size_t input_dim, std::size_t classes) const {
  ModelConfig c;
  c.input_dim = input_dim;
  c.state_dim = state_dim;
  c.classes = classes;
  c.order = order;
  c.pooling = pooling;
  c.sep_orders = sep_orders;
  c.sep_dedup = sep_dedup;
  c.output_tanh = output_tanh;
  c.validate();
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s = synthetic;
  s.seed = seed;
  return s;
}

RunConfig parse_run_config(std::string_view json_text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  RunConfig cfg;
  try {
    Section top(doc, "", {"seed", "model", "train", "generate", "eval", "paths"});
    top.get("seed", cfg.seed);
    if (top.has("model")) {
      Section s(top.at("model"), "model",
                {"state_dim", "order", "pooling", "sep_orders", "sep_dedup", "output_tanh", "init_scale"});
      s.get("state_dim", cfg.state_dim);
      s.get("order", cfg.order);
      std::string pooling;
      s.get("pooling", pooling);
      if (!pooling.empty()) cfg.pooling = parse_pooling(pooling);
      s.get("sep_orders", cfg.sep_orders);
      s.get("sep_dedup", cfg.sep_dedup);
      s.get("output_tanh", cfg.output_tanh);
      s.get("init_scale", cfg.init_scale);
    }
    if (top.has("train")) {
      Section s(top.at("train"), "train", {"lr", "epochs", "bptt", "shuffle", "clip_norm"});
      s.get("lr", cfg.train.learning_rate);
      s.get("epochs", cfg.train.epochs);
      std::string bptt;
      s.get("bptt", bptt);
      if (!bptt.empty()) cfg.train.bptt = parse_bptt(bptt);
      s.get("shuffle", cfg.train.shuffle);
      s.get("clip_norm", cfg.train.clip_norm);
    }
    if (top.has("generate")) {
      Section s(top.at("generate"), "generate",
                {"classes", "per_class", "length", "dim", "noise", "amplitude", "level_range", "min_piece",
                 "max_piece", "train_fraction", "val_fraction"});
      std::vector<std::string> classes;
      s.get("classes", classes);
      if (s.has("classes")) {
        cfg.synthetic.classes.clear();
        for (const auto& c : classes) cfg.synthetic.classes.push_back(parse_kinematics(c));
      }
      s.get("per_class", cfg.synthetic.per_class);
      s.get("length", cfg.synthetic.length);
      s.get("dim", cfg.synthetic.dim);
      s.get("noise", cfg.synthetic.noise);
      s.get("amplitude", cfg.synthetic.amplitude);
      s.get("level_range", cfg.synthetic.level_range);
      s.get("min_piece", cfg.synthetic.min_piece);
      s.get("max_piece", cfg.synthetic.max_piece);
      s.get("train_fraction", cfg.train_fraction);
      s.get("val_fraction", cfg.val_fraction);
    }
    if (top.has("eval")) {
      Section s(top.at("eval"), "eval", {"split", "folds"});
      std::string split;
      s.get("split", split);
      if (!split.empty()) {
        try {
          cfg.eval_split = parse_split(split);
        } catch (const DataError& e) {
          throw ConfigError(e.what());
        }
      }
      s.get("folds", cfg.folds);
    }
    if (top.has("paths")) {
      Section s(top.at("paths"), "paths", {"manifest", "checkpoint", "out"});
      s.get("manifest", cfg.manifest);
      s.get("checkpoint", cfg.checkpoint);
      s.get("out", cfg.out);
    }
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const Error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
  RunConfig cfg = parse_run_config(read_file(path), path.string());
  // Relative paths in a config file are relative to the file.
  const fs::path base = path.parent_path();
  for (std::string* p : {&cfg.manifest, &cfg.checkpoint, &cfg.out}) {
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return cfg;
}

fs::path default_report_dir() {
  const char* env = std::getenv(kReportDirEnv);
  return (env != nullptr && *env != '\0') ? fs::path(env) : fs::path("reports");
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::config:
      case ErrorKind::shape:
        return kConfigError;
      case ErrorKind::data:
      case ErrorKind::io:
        return kDataError;
      case ErrorKind::numeric:
        return kNumericFailure;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e) != nullptr) return kDataError;
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Differential recurrent network: train and inspect sequence classifiers", "drnn"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("generate", "Write a synthetic kinematics dataset with train/val/test splits");
  add_shared(gen, f);
  gen->add_option("--per-class", f.per_class, "Sequences per class");
  gen->add_option("--length", f.length, "Frames per sequence");
  gen->add_option("--dim", f.dim, "Features per frame");
  gen->add_option("--noise", f.noise, "Gaussian noise sigma");

  auto* tr = app.add_subcommand("train", "Train a model; checkpoint on every validation improvement");
  add_shared(tr, f);
  tr->add_option("--manifest", f.manifest, "Dataset manifest");
  tr->add_option("--checkpoint", f.checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
  tr->add_option("--state-dim", f.state_dim, "Memory cell units");
  tr->add_option("--init-scale", f.init_scale, "Uniform init half-width");
  tr->add_option("--clip-norm", f.clip_norm, "Gradient norm clip (0 = off)");

  auto* ev = app.add_subcommand("eval", "Accuracy, per-class recall and confusion matrix");
  add_shared(ev, f);
  ev->add_option("--manifest", f.manifest, "Dataset manifest");
  ev->add_option("--checkpoint", f.checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
  ev->add_option("--split", f.split, "Split to evaluate (default test)");
  ev->add_option("--folds", f.folds, "Cross-validate with n folds, retraining per fold");
  ev->add_option("--state-dim", f.state_dim, "Memory cell units (cross-validation)");
  ev->add_option("--init-scale", f.init_scale, "Uniform init half-width (cross-validation)");

  auto* tc = app.add_subcommand("trace", "Per-frame predictions and state energy profiles of one sequence");
  add_shared(tc, f);
  tc->add_option("--checkpoint", f.checkpoint, "Checkpoint path (default <out>/checkpoint.bin)");
  tc->add_option("--sequence", f.sequence, "Sequence file (.seq or .csv)")->required();

  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  add_shared(gc, f);
  gc->add_option("--input-dim", f.gc_input_dim, "Input features (<= 8)");
  gc->add_option("--state-dim", f.gc_state_dim, "Memory cell units (<= 8)");
  gc->add_option("--classes", f.gc_classes, "Classes (<= 8)");
  gc->add_option("--length", f.gc_length, "Longest sequence (<= 8)");
  gc->add_option("--seeds", f.gc_seeds, "Seeds per configuration");
  gc->add_option("--inject-fault", f.inject_fault, "Corrupt one analytic gradient tensor, e.g. W_sh");

  auto* pc = app.add_subcommand("pca", "Reduce a dataset with PCA fitted on its train split");
  add_shared(pc, f);
  pc->add_option("--manifest", f.manifest, "Dataset manifest");
  pc->add_option("--energy", f.energy, "Variance fraction to retain (default 0.9)");
  pc->add_option("--components", f.components, "Keep exactly this many components");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    const RunConfig cfg = resolve(f);
    if (gen->parsed()) return cmd_generate(cfg, out);
    if (tr->parsed()) return cmd_train(cfg, out);
    if (ev->parsed()) return cmd_eval(cfg, out);
    if (tc->parsed()) return cmd_trace(cfg, f, out);
    if (gc->parsed()) return cmd_gradcheck(cfg, f, out);
    if (pc->parsed()) return cmd_pca(cfg, f, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kConfigError;
}

}  // namespace drnn::cli
