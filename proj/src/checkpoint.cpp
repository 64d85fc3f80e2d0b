#include "drnn/checkpoint.hpp"

#include <bit>
#include <cstdint>

#include "drnn/data.hpp"
#include "drnn/error.hpp"

namespace drnn {

namespace {

constexpr std::string_view kMagic = "DRNNCKPT";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagTanh = 1;
constexpr std::uint32_t kFlagDedup = 2;

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int b = 0; b < width; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view in, const std::string& source) : in_(in), source_(source) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(DataError::Code::malformed, source_ + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail("truncated checkpoint");
  }
  std::uint64_t get(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + b])) << (8 * b);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string_view in_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Model& model) {
  model.validate();
  const ModelConfig& c = model.config;
  Writer w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u64(c.input_dim);
  w.u64(c.state_dim);
  w.u64(c.classes);
  w.u32(static_cast<std::uint32_t>(c.order));
  w.u32(static_cast<std::uint32_t>(c.pooling));
  w.u32((c.output_tanh ? kFlagTanh : 0) | (c.sep_dedup ? kFlagDedup : 0));
  w.u32(static_cast<std::uint32_t>(c.sep_orders.size()));
  for (int k : c.sep_orders) w.u32(static_cast<std::uint32_t>(k));

  std::uint32_t count = 0;
  model.for_each_tensor([&](const std::string&, std::size_t, std::size_t, auto) { ++count; });
  w.u32(count);
  model.for_each_tensor([&](const std::string& name, std::size_t rows, std::size_t cols,
                            std::span<const double> data) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u64(rows);
    w.u64(cols);
    for (double x : data) w.f64(x);
  });
  return w.take();
}

Model decode_checkpoint(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.bytes(kMagic.size()) != kMagic) r.fail("not a checkpoint");
  if (const auto v = r.u32(); v != kVersion) r.fail("unsupported checkpoint version " + std::to_string(v));

  ModelConfig c;
  c.input_dim = r.u64();
  c.state_dim = r.u64();
  c.classes = r.u64();
  c.order = static_cast<int>(r.u32());
  const auto pooling = r.u32();
  if (pooling > static_cast<std::uint32_t>(Pooling::sep)) r.fail("unknown pooling code");
  c.pooling = static_cast<Pooling>(pooling);
  const auto flags = r.u32();
  c.output_tanh = flags & kFlagTanh;
  c.sep_dedup = flags & kFlagDedup;
  const auto n_sep = r.u32();
  if (n_sep > kMaxDosOrder + 1) r.fail("too many SEP orders");
  for (std::uint32_t i = 0; i < n_sep; ++i) c.sep_orders.push_back(static_cast<int>(r.u32()));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid configuration: ") + e.what());
  }

  Model model = Model::zeros(c);
  std::uint32_t expected = 0;
  model.for_each_tensor([&](const std::string&, std::size_t, std::size_t, auto) { ++expected; });
  if (r.u32() != expected) r.fail("tensor count does not match the configuration");
  model.for_each_tensor([&](const std::string& name, std::size_t rows, std::size_t cols,
                            std::span<double> data) {
    const auto len = r.u32();
    const std::string_view got = r.bytes(len);
    if (got != name) r.fail("expected tensor " + name + ", found " + std::string(got));
    if (r.u64() != rows || r.u64() != cols) r.fail("tensor " + name + " has the wrong shape");
    for (double& x : data) x = r.f64();
  });
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError(DataError::Code::missing_file, "checkpoint '" + path.string() + "' not found");
  }
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace drnn
