#pragma once

#include <filesystem>
#include <string>

#include "drnn/model.hpp"

namespace drnn {

/// Binary model checkpoint, little-endian:
///
///   magic       8 bytes "DRNNCKPT"
///   version     u32 (1)
///   input_dim   u64
///   state_dim   u64
///   classes     u64
///   order       u32   derivative-of-state order N
///   pooling     u32   0 lhs, 1 mean, 2 max, 3 sep
///   flags       u32   bit 0 output tanh, bit 1 SEP dedup
///   n_sep       u32   followed by n_sep u32 SEP orders
///   n_tensors   u32
///   per tensor: u32 name length, name bytes (ASCII), u64 rows, u64 cols,
///               rows*cols f64 row-major
///
/// Tensors appear in Model::for_each_tensor order; the reader also checks
/// names and shapes against the configuration.
std::string encode_checkpoint(const Model& model);
Model decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint");

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace drnn
