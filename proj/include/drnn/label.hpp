#pragma once

#include <cstddef>
#include <variant>
#include <vector>

namespace drnn {

/// Target of one sequence: a single class, or one class per frame.
/// Class indices are 0-based in memory; every file format stores them 1-based.
struct Label {
  std::variant<std::size_t, std::vector<std::size_t>> value;

  static Label sequence(std::size_t c) { return Label{c}; }
  static Label frames(std::vector<std::size_t> cs) { return Label{std::move(cs)}; }

  bool is_frame_level() const { return std::holds_alternative<std::vector<std::size_t>>(value); }
  std::size_t sequence_class() const { return std::get<std::size_t>(value); }
  const std::vector<std::size_t>& frame_classes() const {
    return std::get<std::vector<std::size_t>>(value);
  }

  friend bool operator==(const Label&, const Label&) = default;
};

}  // namespace drnn
