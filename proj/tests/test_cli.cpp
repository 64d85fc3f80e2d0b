#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <sstream>

#include "drnn/checkpoint.hpp"
#include "drnn/cli.hpp"
#include "drnn/data.hpp"
#include "drnn/metrics.hpp"
#include "drnn/pooling.hpp"
#include "test_support.hpp"

using namespace drnn;
using testing_support::slurp;
using testing_support::TempDir;
using testing_support::write_text;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run drnn_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

/// Small generated dataset shared by several cases.
std::string small_dataset(const TempDir& dir, const std::string& seed = "3") {
  const auto out = (dir / "data").string();
  REQUIRE(drnn_cli({"generate", "--out", out, "--per-class", "10", "--length", "12", "--dim", "4", "--seed", seed})
              .code == 0);
  return (dir / "data" / "manifest.txt").string();
}

}  // namespace

TEST_CASE("confusion matrix bookkeeping") {
  ConfusionMatrix one(3);
  one.add(1, 1);
  CHECK(one.accuracy() == 1.0);
  CHECK(one.total() == 1);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t p = 0; p < 3; ++p) CHECK(one.count(t, p) == (t == 1 && p == 1 ? 1u : 0u));
  }

  Rng rng(8);
  ConfusionMatrix cm(3);
  std::size_t per_class[3] = {};
  for (std::size_t i = 0; i < 3000; ++i) {
    const std::size_t truth = i % 3;
    ++per_class[truth];
    cm.add(truth, rng.below(3));
  }
  CHECK(std::abs(cm.accuracy() - 1.0 / 3) <= 0.03);
  double diag = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(cm.row_sum(c) == per_class[c]);
    diag += static_cast<double>(cm.count(c, c));
  }
  CHECK(cm.accuracy() == diag / 3000.0);
  CHECK(cm.recall(0) == static_cast<double>(cm.count(0, 0)) / 1000.0);
  CHECK_THROWS_AS(cm.add(3, 0), ShapeError);
  CHECK(ConfusionMatrix(2).accuracy() == 0.0);
  CHECK(ConfusionMatrix(2).recall(1) == 0.0);

  CHECK(cm.to_csv({"a", "b", "c"}).rfind("true\\predicted,a,b,c\na,", 0) == 0);
}

TEST_CASE("fold averaging averages counts, then normalizes") {
  ConfusionMatrix a(2), b(2);
  a.add(0, 0);
  a.add(0, 0);
  a.add(0, 0);
  a.add(1, 0);
  b.add(0, 1);
  b.add(1, 1);
  const std::vector<ConfusionMatrix> folds{a, b};
  const Matrix mean = average_counts(folds);
  CHECK(mean == Matrix{{1.5, 0.5}, {0.5, 0.5}});
  const Matrix norm = row_normalize(mean);
  CHECK(norm == Matrix{{0.75, 0.25}, {0.5, 0.5}});
  CHECK(matrix_csv(norm, {}) == "true\\predicted,1,2\n1,0.75,0.25\n2,0.5,0.5\n");
  CHECK(format_number(0.1) == "0.1");
}

TEST_CASE("generate writes the requested splits") {
  TempDir dir;
  const auto r = drnn_cli({"generate", "--out", (dir / "d").string()});
  REQUIRE(r.code == 0);
  const Dataset ds = load_dataset(dir / "d" / "manifest.txt");
  CHECK(ds.size() == 300);
  CHECK(ds.classes == 3);
  CHECK(ds.dim == 8);
  CHECK(ds.subset(Split::train).size() == 180);
  CHECK(ds.subset(Split::val).size() == 60);
  CHECK(ds.subset(Split::test).size() == 60);
  for (const auto& s : ds.sequences) CHECK(s.length() == 40);
}

TEST_CASE("generate is reproducible and rejects empty requests") {
  TempDir a, b;
  small_dataset(a);
  small_dataset(b);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(a / "data")) {
    CHECK(slurp(entry.path()) == slurp(b / "data" / entry.path().filename()));
    ++files;
  }
  CHECK(files == 31);
  const auto r = drnn_cli({"generate", "--out", (a / "x").string(), "--per-class", "0"});
  CHECK(r.code == cli::kConfigError);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("train with zero learning rate saves the initialization") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto out = (dir / "run").string();
  const auto r = drnn_cli({"train", "--manifest", manifest, "--out", out, "--epochs", "1", "--lr", "0", "--seed", "5",
                           "--state-dim", "6"});
  REQUIRE(r.code == 0);
  const Model saved = load_checkpoint(dir / "run" / "checkpoint.bin");
  ModelConfig c;
  c.input_dim = 4;
  c.state_dim = 6;
  c.classes = 3;
  CHECK(saved == Model::random(c, 5));

  const auto log = read_csv(dir / "run" / "train_log.csv");
  REQUIRE(log.size() == 3);
  CHECK(log[0] == std::vector<std::string>{"epoch", "mean_loss", "train_accuracy", "val_accuracy"});
  CHECK(log[1][0] == "1");
  CHECK(log[2][0].rfind("# best_epoch=1", 0) == 0);
  CHECK(read_csv(dir / "run" / "train_timing.csv").size() == 2);
}

TEST_CASE("training is reproducible and accepts narrow state layers") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  for (const char* run : {"r1", "r2"}) {
    const auto r = drnn_cli({"train", "--manifest", manifest, "--out", (dir / run).string(), "--epochs", "3", "--lr",
                             "0.01", "--state-dim", "2"});
    REQUIRE(r.code == 0);
    CHECK(r.err.empty());
  }
  CHECK(slurp(dir / "r1" / "train_log.csv") == slurp(dir / "r2" / "train_log.csv"));
  CHECK(slurp(dir / "r1" / "checkpoint.bin") == slurp(dir / "r2" / "checkpoint.bin"));
}

TEST_CASE("eval reports accuracy, recall and a consistent confusion matrix") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto out = (dir / "run").string();
  REQUIRE(drnn_cli({"train", "--manifest", manifest, "--out", out, "--epochs", "2", "--lr", "0.01"}).code == 0);
  const auto r = drnn_cli({"eval", "--manifest", manifest, "--out", out});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("test accuracy") != std::string::npos);

  const Dataset test = load_dataset(manifest).subset(Split::test);
  const auto cm = read_csv(dir / "run" / "confusion.csv");
  REQUIRE(cm.size() == 4);
  CHECK(cm[0] == std::vector<std::string>{"true\\predicted", "constant", "ramp", "arc"});
  std::size_t diag = 0, total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0, expected = 0;
    for (std::size_t p = 0; p < 3; ++p) row += std::stoul(cm[c + 1][p + 1]);
    for (const auto& s : test.sequences) expected += s.label.sequence_class() == c;
    CHECK(row == expected);
    diag += std::stoul(cm[c + 1][c + 1]);
    total += row;
  }
  const auto metrics = read_csv(dir / "run" / "metrics.csv");
  CHECK(metrics[3][0] == "accuracy");
  CHECK(std::stod(metrics[3][1]) == doctest::Approx(double(diag) / double(total)));
  CHECK(metrics.back()[0] == "recall_arc");

  const auto preds = read_csv(dir / "run" / "predictions.csv");
  CHECK(preds.size() == test.size() + 1);
  CHECK(preds[0] == std::vector<std::string>{"id", "t", "true", "p_constant", "p_ramp", "p_arc", "predicted"});
}

TEST_CASE("eval rejects a checkpoint trained for another class count") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  ModelConfig c;
  c.input_dim = 4;
  c.state_dim = 3;
  c.classes = 4;
  save_checkpoint(Model::random(c, 1), dir / "four.bin");
  const auto r = drnn_cli({"eval", "--manifest", manifest, "--checkpoint", (dir / "four.bin").string(), "--out",
                           (dir / "e").string()});
  CHECK(r.code == cli::kDataError);
  CHECK(r.err.find("class-count mismatch") != std::string::npos);
}

TEST_CASE("cross-validation writes fold and averaged matrices") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto out = dir / "cv";
  const auto r = drnn_cli({"eval", "--manifest", manifest, "--out", out.string(), "--folds", "3", "--epochs", "1"});
  REQUIRE(r.code == 0);
  std::vector<std::vector<double>> sum(3, std::vector<double>(3));
  std::size_t examples = 0;
  for (int f = 1; f <= 3; ++f) {
    const auto cm = read_csv(out / ("fold_" + std::to_string(f)) / "confusion.csv");
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t p = 0; p < 3; ++p) {
        sum[t][p] += std::stod(cm[t + 1][p + 1]);
        examples += std::stoul(cm[t + 1][p + 1]);
      }
    }
  }
  CHECK(examples == 30);
  const auto mean = read_csv(out / "confusion_mean.csv");
  const auto norm = read_csv(out / "confusion_mean_normalized.csv");
  for (std::size_t t = 0; t < 3; ++t) {
    double row = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      CHECK(std::stod(mean[t + 1][p + 1]) == doctest::Approx(sum[t][p] / 3));
      row += std::stod(norm[t + 1][p + 1]);
    }
    CHECK(row == doctest::Approx(1.0));
  }
  CHECK(drnn_cli({"eval", "--manifest", manifest, "--out", out.string(), "--folds", "1"}).code == cli::kConfigError);
}

TEST_CASE("trace writes one row per frame") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto out = dir / "run";
  REQUIRE(drnn_cli({"train", "--manifest", manifest, "--out", out.string(), "--epochs", "1", "--order", "2"}).code == 0);
  const auto seq = dir / "data" / "seq_00004.seq";
  REQUIRE(drnn_cli({"trace", "--out", out.string(), "--sequence", seq.string()}).code == 0);

  const auto frames = read_csv(out / "frames.csv");
  const auto sep = read_csv(out / "sep.csv");
  REQUIRE(frames.size() == 13);
  REQUIRE(sep.size() == 13);
  CHECK(sep[0] == std::vector<std::string>{"t", "E0", "E1", "E2", "landmark_0", "landmark_1", "landmark_2"});
  for (std::size_t t = 1; t <= 12; ++t) {
    double sum = 0;
    for (std::size_t c = 1; c <= 3; ++c) sum += std::stod(frames[t][c]);
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
  const Model model = load_checkpoint(out / "checkpoint.bin");
  const auto traces = run_sequence(model.cell, read_sequence_file(seq).features);
  for (int n = 0; n <= 2; ++n) {
    const auto lm = find_landmarks(energy_profile(traces, n, 2).values);
    for (std::size_t t = 0; t < 12; ++t) {
      const bool flagged = sep[t + 1][4 + n] == "1";
      CHECK(flagged == (std::find(lm.begin(), lm.end(), t) != lm.end()));
    }
  }
}

TEST_CASE("trace leaves orders above the model's blank") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto out = dir / "run";
  REQUIRE(drnn_cli({"train", "--manifest", manifest, "--out", out.string(), "--epochs", "1", "--order", "0",
                    "--pooling", "lhs"})
              .code == 0);
  REQUIRE(drnn_cli({"trace", "--out", out.string(), "--sequence", (dir / "data" / "seq_00000.seq").string()}).code ==
          0);
  const auto sep = read_csv(out / "sep.csv");
  CHECK(sep[1][2].empty());
  CHECK(sep[1][3].empty());
  CHECK(sep[1][6].empty());
  CHECK_FALSE(sep[1][1].empty());
}

TEST_CASE("gradcheck command") {
  TempDir dir;
  const auto ok = drnn_cli({"gradcheck", "--out", dir.path().string()});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("36/36") != std::string::npos);
  CHECK(read_csv(dir / "gradcheck.csv").size() > 36);

  const auto bad = drnn_cli({"gradcheck", "--out", dir.path().string(), "--inject-fault", "W_ox"});
  CHECK(bad.code == cli::kCheckFailed);

  const auto trunc = drnn_cli({"gradcheck", "--out", dir.path().string(), "--bptt", "truncated"});
  CHECK(trunc.code == cli::kConfigError);
  CHECK(trunc.err.find("truncated") != std::string::npos);

  CHECK(drnn_cli({"gradcheck", "--out", dir.path().string(), "--state-dim", "9"}).code == cli::kConfigError);
  CHECK(drnn_cli({"gradcheck", "--out", dir.path().string(), "--length", "12"}).code == cli::kConfigError);
}

TEST_CASE("config file with flag overrides") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  write_text(dir / "run.json", R"({"seed": 4, "model": {"state_dim": 3, "order": 1, "pooling": "mean"},
    "train": {"lr": 0.01, "epochs": 2}, "paths": {"manifest": "data/manifest.txt", "out": "cfg_out"}})");
  const auto r = drnn_cli({"train", "--config", (dir / "run.json").string(), "--epochs", "1"});
  REQUIRE(r.code == 0);
  const Model m = load_checkpoint(dir / "cfg_out" / "checkpoint.bin");
  CHECK(m.config.state_dim == 3);
  CHECK(m.config.order == 1);
  CHECK(m.config.pooling == Pooling::mean);
  CHECK(read_csv(dir / "cfg_out" / "train_log.csv").size() == 3);

  const auto cfg = cli::parse_run_config(R"({"train": {"bptt": "truncated"}, "eval": {"folds": 5}})");
  CHECK(cfg.train.bptt == Bptt::truncated);
  CHECK(cfg.folds == 5);

  CHECK_THROWS_AS(cli::parse_run_config(R"({"model": {"state_dims": 3}})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config(R"({"optimizer": {}})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config(R"({"model": {"state_dim": -3}})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config(R"({"model": {"pooling": "median"}})"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("{not json"), ConfigError);

  write_text(dir / "bad.json", R"({"model": {"order": 3}})");
  CHECK(drnn_cli({"train", "--config", (dir / "bad.json").string(), "--manifest", manifest}).code ==
        cli::kConfigError);
}

TEST_CASE("exit codes") {
  TempDir dir;
  CHECK(drnn_cli({}).code == cli::kConfigError);
  CHECK(drnn_cli({"frobnicate"}).code == cli::kConfigError);
  CHECK(drnn_cli({"train", "--order", "7", "--manifest", "x"}).code == cli::kConfigError);
  CHECK(drnn_cli({"train", "--pooling", "median", "--manifest", "x"}).code == cli::kConfigError);
  CHECK(drnn_cli({"train", "--manifest", (dir / "none.txt").string(), "--out", dir.path().string()}).code ==
        cli::kDataError);
  CHECK(drnn_cli({"eval", "--split", "dev", "--manifest", "x"}).code == cli::kConfigError);
  CHECK(drnn_cli({"generate", "--help"}).code == 0);

  // A checkpoint holding a NaN weight fails at the first step.
  ModelConfig c;
  c.input_dim = 2;
  c.state_dim = 2;
  Model m = Model::random(c, 1);
  m.cell.w_sx(0, 0) = std::numeric_limits<double>::quiet_NaN();
  save_checkpoint(m, dir / "nan.bin");
  write_sequence_file(dir / "s.seq", Matrix{{1, 2}, {3, 4}});
  const auto r = drnn_cli({"trace", "--checkpoint", (dir / "nan.bin").string(), "--sequence",
                           (dir / "s.seq").string(), "--out", dir.path().string()});
  CHECK(r.code == cli::kNumericFailure);
}

TEST_CASE("report directory defaults to the environment variable") {
  TempDir dir;
  const auto target = dir / "from_env";
  ::setenv(cli::kReportDirEnv, target.string().c_str(), 1);
  const auto r = drnn_cli({"generate", "--per-class", "2"});
  ::unsetenv(cli::kReportDirEnv);
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(target / "manifest.txt"));
  CHECK(cli::default_report_dir() == "reports");
}

TEST_CASE("pca command reduces a dataset") {
  TempDir dir;
  const auto manifest = small_dataset(dir);
  const auto r = drnn_cli({"pca", "--manifest", manifest, "--out", (dir / "pca").string(), "--components", "2"});
  REQUIRE(r.code == 0);
  const Dataset reduced = load_dataset(dir / "pca" / "manifest.txt");
  CHECK(reduced.dim == 2);
  CHECK(reduced.size() == 30);
  const auto table = read_csv(dir / "pca" / "pca.csv");
  CHECK(table.size() == 5);
  CHECK(table[2][3] == "1");
  CHECK(table[3][3] == "0");
}
