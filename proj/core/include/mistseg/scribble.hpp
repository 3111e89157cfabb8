#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mistseg {

enum class Label : std::uint8_t { Unlabeled = 0, Background = 1, Foreground = 2 };

/// Per-pixel scribble annotation. Unlabeled pixels form the set the
/// tree-energy loss acts on.
struct ScribbleMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Label> labels;

  ScribbleMask() = default;
  ScribbleMask(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, Label::Unlabeled) {}

  Label at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  Label& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::size_t size() const { return labels.size(); }
  std::size_t count(Label l) const;
  std::size_t labeled_count() const { return size() - count(Label::Unlabeled); }
};

/// Flattens several masks into one label vector (batch order).
std::vector<Label> stack_labels(std::span<const ScribbleMask* const> masks);

}  // namespace mistseg
