#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "drnn/error.hpp"
#include "drnn/label.hpp"
#include "drnn/numerics.hpp"

namespace drnn {

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view text);

struct LabeledSequence {
  std::string id;
  Matrix features;  // T x D, one row per frame
  Label label;
  Split split = Split::train;

  std::size_t length() const { return features.rows(); }
};

struct Dataset {
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::vector<std::string> class_names;
  std::vector<LabeledSequence> sequences;

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }

  /// Sequences carrying the given split tag, in dataset order.
  Dataset subset(Split split) const;
  /// Throws DataError when any sequence breaks the dataset invariants.
  void validate() const;
};

class DataError : public Error {
 public:
  enum class Code { no_sequences, missing_file, dim_mismatch, label_out_of_range, class_mismatch, malformed };

  DataError(Code code, const std::string& what) : Error(ErrorKind::data, what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

/// Binary sequence file, little-endian throughout:
///   0   8 bytes  magic "DRNNSEQ\0"
///   8   u32      format version (1)
///   12  u32      flags, bit 0 set when per-frame labels follow the features
///   16  u64      T (frames)
///   24  u64      D (features per frame)
///   32  T*D f64  features, row-major
///   ... T   u32  1-based frame labels, present only with flag bit 0
void write_sequence_file(const std::filesystem::path& path, const Matrix& features,
                         const std::vector<std::size_t>* frame_labels = nullptr);

struct SequenceFile {
  Matrix features;
  std::vector<std::size_t> frame_labels;  // 0-based; empty when absent
};
SequenceFile read_sequence_file(const std::filesystem::path& path);

/// CSV with header `t,f1,...,fD` and an optional trailing `label` column
/// holding 1-based per-frame classes.
SequenceFile read_sequence_csv(const std::filesystem::path& path);

/// Reads a .seq binary or a .csv sequence, chosen by extension.
SequenceFile read_sequence_any(const std::filesystem::path& path);

/// Manifest text format (one directive per line, '#' starts a comment):
///   version 1
///   dim <D>
///   classes <k>
///   class_names <name_1> ... <name_k>        (optional)
///   seq <path> <label> <split>
/// <path> is relative to the manifest's directory, <label> is a 1-based
/// class or the word `frames` (labels stored in the sequence file), and
/// <split> is train, val or test. The sequence id is the path without
/// its extension.
Dataset load_dataset(const std::filesystem::path& manifest);

/// Writes every sequence as `<dir>/<id>.seq` plus `<dir>/manifest.txt`.
/// Files are written to a temporary name and renamed into place.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Write text atomically: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace drnn
