#include "drnn/data.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace drnn {

namespace fs = std::filesystem;

namespace {

constexpr char kSeqMagic[8] = {'D', 'R', 'N', 'N', 'S', 'E', 'Q', '\0'};
constexpr std::uint32_t kSeqVersion = 1;
constexpr std::uint32_t kFlagFrameLabels = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint64_t uint(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    }
    pos_ += width;
    return v;
  }
  double f64() { return std::bit_cast<double>(uint(8)); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(DataError::Code::malformed, source_ + ": truncated file");
    }
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::size_t parse_count(const std::string& text, const std::string& where) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError(DataError::Code::malformed, where + ": expected a non-negative integer, got '" +
                                                    text + "'");
  }
  return v;
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError(DataError::Code::malformed, where + ": expected a number, got '" + text + "'");
  }
  return v;
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw DataError(DataError::Code::malformed,
                  "unknown split '" + std::string(text) + "' (expected train, val or test)");
}

Dataset Dataset::subset(Split split) const {
  Dataset out;
  out.dim = dim;
  out.classes = classes;
  out.class_names = class_names;
  for (const auto& seq : sequences) {
    if (seq.split == split) out.sequences.push_back(seq);
  }
  return out;
}

void Dataset::validate() const {
  if (sequences.empty()) throw DataError(DataError::Code::no_sequences, "dataset has no sequences");
  for (const auto& seq : sequences) {
    if (seq.length() == 0) {
      throw DataError(DataError::Code::malformed, "sequence '" + seq.id + "' has no frames");
    }
    if (seq.features.cols() != dim) {
      throw DataError(DataError::Code::dim_mismatch,
                      "sequence '" + seq.id + "' has " + std::to_string(seq.features.cols()) +
                          " features per frame, dataset dim is " + std::to_string(dim));
    }
    if (!seq.features.all_finite()) {
      throw DataError(DataError::Code::malformed, "sequence '" + seq.id + "' has non-finite features");
    }
    auto check_class = [&](std::size_t c) {
      if (c >= classes) {
        throw DataError(DataError::Code::label_out_of_range,
                        "sequence '" + seq.id + "' has label " + std::to_string(c + 1) +
                            " outside 1.." + std::to_string(classes));
      }
    };
    if (seq.label.is_frame_level()) {
      const auto& fl = seq.label.frame_classes();
      if (fl.size() != seq.length()) {
        throw DataError(DataError::Code::malformed,
                        "sequence '" + seq.id + "' has " + std::to_string(fl.size()) +
                            " frame labels for " + std::to_string(seq.length()) + " frames");
      }
      for (std::size_t c : fl) check_class(c);
    } else {
      check_class(seq.label.sequence_class());
    }
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_sequence_file(const fs::path& path, const Matrix& features,
                         const std::vector<std::size_t>* frame_labels) {
  const bool with_labels = frame_labels != nullptr && !frame_labels->empty();
  if (with_labels && frame_labels->size() != features.rows()) {
    throw ShapeError("frame label count " + std::to_string(frame_labels->size()) +
                     " does not match " + std::to_string(features.rows()) + " frames");
  }
  std::string out(kSeqMagic, sizeof kSeqMagic);
  put_u32(out, kSeqVersion);
  put_u32(out, with_labels ? kFlagFrameLabels : 0);
  put_u64(out, features.rows());
  put_u64(out, features.cols());
  for (double x : features.span()) put_u64(out, std::bit_cast<std::uint64_t>(x));
  if (with_labels) {
    for (std::size_t c : *frame_labels) put_u32(out, static_cast<std::uint32_t>(c + 1));
  }
  write_file_atomic(path, out);
}

SequenceFile read_sequence_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes, path.string());
  if (in.take(sizeof kSeqMagic) != std::string_view(kSeqMagic, sizeof kSeqMagic)) {
    throw DataError(DataError::Code::malformed, path.string() + ": not a sequence file");
  }
  const auto version = in.uint(4);
  if (version != kSeqVersion) {
    throw DataError(DataError::Code::malformed,
                    path.string() + ": unsupported sequence format version " + std::to_string(version));
  }
  const auto flags = in.uint(4);
  const auto rows = in.uint(8);
  const auto cols = in.uint(8);
  SequenceFile seq;
  seq.features = Matrix(rows, cols);
  for (double& x : seq.features.span()) x = in.f64();
  if (flags & kFlagFrameLabels) {
    seq.frame_labels.reserve(rows);
    for (std::uint64_t t = 0; t < rows; ++t) {
      const auto c = in.uint(4);
      if (c == 0) {
        throw DataError(DataError::Code::label_out_of_range, path.string() + ": frame label 0 (labels are 1-based)");
      }
      seq.frame_labels.push_back(c - 1);
    }
  }
  if (!in.at_end()) throw DataError(DataError::Code::malformed, path.string() + ": trailing bytes");
  return seq;
}

SequenceFile read_sequence_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(DataError::Code::malformed, path.string() + ": empty CSV");
  auto split_commas = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream s(l);
    while (std::getline(s, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  };
  const auto header = split_commas(line);
  if (header.size() < 2 || header.front() != "t") {
    throw DataError(DataError::Code::malformed, path.string() + ": header must start with t,f1");
  }
  const bool has_label = header.back() == "label";
  const std::size_t dim = header.size() - 1 - (has_label ? 1 : 0);
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[1 + j] != "f" + std::to_string(j + 1)) {
      throw DataError(DataError::Code::malformed,
                      path.string() + ": expected column f" + std::to_string(j + 1) + ", got '" +
                          header[1 + j] + "'");
    }
  }
  std::vector<double> values;
  SequenceFile seq;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_commas(line);
    const std::string where = path.string() + " row " + std::to_string(rows + 1);
    if (cells.size() != header.size()) {
      throw DataError(DataError::Code::dim_mismatch, where + ": expected " + std::to_string(header.size()) +
                                                         " columns, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) values.push_back(parse_double(cells[1 + j], where));
    if (has_label) {
      const std::size_t c = parse_count(cells.back(), where);
      if (c == 0) throw DataError(DataError::Code::label_out_of_range, where + ": label 0 (labels are 1-based)");
      seq.frame_labels.push_back(c - 1);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(DataError::Code::malformed, path.string() + ": no frames");
  seq.features = Matrix(rows, dim);
  std::copy(values.begin(), values.end(), seq.features.span().begin());
  return seq;
}

SequenceFile read_sequence_any(const fs::path& path) {
  if (path.extension() == ".csv") return read_sequence_csv(path);
  return read_sequence_file(path);
}

Dataset load_dataset(const fs::path& manifest) {
  if (!fs::exists(manifest)) {
    throw DataError(DataError::Code::missing_file, "manifest '" + manifest.string() + "' not found");
  }
  std::istringstream in(read_file(manifest));
  const fs::path base = manifest.parent_path();
  Dataset ds;
  bool have_dim = false, have_classes = false;
  std::size_t line_no = 0;
  struct Record {
    std::string path, label, split;
    std::size_t line;
  };
  std::vector<Record> records;

  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto words = split_ws(line);
    if (words.empty()) continue;
    const std::string where = manifest.string() + ":" + std::to_string(line_no);
    const std::string& key = words.front();
    if (key == "version") {
      if (words.size() != 2 || parse_count(words[1], where) != 1) {
        throw DataError(DataError::Code::malformed, where + ": unsupported manifest version");
      }
    } else if (key == "dim") {
      if (words.size() != 2) throw DataError(DataError::Code::malformed, where + ": dim takes one value");
      ds.dim = parse_count(words[1], where);
      have_dim = true;
    } else if (key == "classes") {
      if (words.size() != 2) throw DataError(DataError::Code::malformed, where + ": classes takes one value");
      ds.classes = parse_count(words[1], where);
      have_classes = true;
    } else if (key == "class_names") {
      ds.class_names.assign(words.begin() + 1, words.end());
    } else if (key == "seq") {
      if (words.size() != 4) {
        throw DataError(DataError::Code::malformed, where + ": expected 'seq <path> <label> <split>'");
      }
      records.push_back({words[1], words[2], words[3], line_no});
    } else {
      throw DataError(DataError::Code::malformed, where + ": unknown directive '" + key + "'");
    }
  }
  if (!have_dim || !have_classes) {
    throw DataError(DataError::Code::malformed, manifest.string() + ": dim and classes are required");
  }
  if (!ds.class_names.empty() && ds.class_names.size() != ds.classes) {
    throw DataError(DataError::Code::malformed, manifest.string() + ": " +
                                                    std::to_string(ds.class_names.size()) +
                                                    " class names for " + std::to_string(ds.classes) +
                                                    " classes");
  }
  if (records.empty()) throw DataError(DataError::Code::no_sequences, manifest.string() + ": no sequences");

  for (const auto& r : records) {
    const std::string where = manifest.string() + ":" + std::to_string(r.line);
    LabeledSequence seq;
    seq.id = fs::path(r.path).replace_extension().generic_string();
    seq.split = parse_split(r.split);
    const fs::path file = base / r.path;
    if (!fs::exists(file)) {
      throw DataError(DataError::Code::missing_file,
                      "sequence '" + seq.id + "': file '" + file.string() + "' not found");
    }
    SequenceFile sf = read_sequence_any(file);
    seq.features = std::move(sf.features);
    if (r.label == "frames") {
      if (sf.frame_labels.empty()) {
        throw DataError(DataError::Code::malformed,
                        "sequence '" + seq.id + "' is marked frame-labelled but its file has no labels");
      }
      seq.label = Label::frames(std::move(sf.frame_labels));
    } else {
      const std::size_t c = parse_count(r.label, where);
      if (c == 0 || c > ds.classes) {
        throw DataError(DataError::Code::label_out_of_range,
                        "sequence '" + seq.id + "' has label " + r.label + " outside 1.." +
                            std::to_string(ds.classes));
      }
      seq.label = Label::sequence(c - 1);
    }
    ds.sequences.push_back(std::move(seq));
  }
  ds.validate();
  return ds;
}

fs::path save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  std::ostringstream manifest;
  manifest << "# drnn dataset manifest\n";
  manifest << "version 1\n";
  manifest << "dim " << ds.dim << "\n";
  manifest << "classes " << ds.classes << "\n";
  if (!ds.class_names.empty()) {
    manifest << "class_names";
    for (const auto& name : ds.class_names) manifest << ' ' << name;
    manifest << "\n";
  }
  for (const auto& seq : ds.sequences) {
    const std::string rel = seq.id + ".seq";
    if (seq.label.is_frame_level()) {
      write_sequence_file(dir / rel, seq.features, &seq.label.frame_classes());
      manifest << "seq " << rel << " frames " << to_string(seq.split) << "\n";
    } else {
      write_sequence_file(dir / rel, seq.features);
      manifest << "seq " << rel << ' ' << seq.label.sequence_class() + 1 << ' ' << to_string(seq.split)
               << "\n";
    }
  }
  const fs::path path = dir / "manifest.txt";
  write_file_atomic(path, manifest.str());
  return path;
}

}  // namespace drnn
