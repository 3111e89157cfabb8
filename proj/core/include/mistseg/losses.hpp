#pragma once

#include <span>

#include "mistseg/scribble.hpp"
#include "mistseg/tensor.hpp"

namespace mistseg::pipeline {

inline constexpr double kProbEps = 1e-12;

/// Mean binary cross-entropy over labeled pixels only (FG target 1, BG 0).
/// Pooled over every pixel of `s` when `labels` covers a whole batch. Returns 0
/// and logs a warning when nothing is labeled.
Tensor partial_ce(const Tensor& s, std::span<const Label> labels);
Tensor partial_ce(const Tensor& s, const ScribbleMask& mask);

/// 1 + 5 |avgpool15(t) - t| per pixel, the window mean taken over in-image
/// pixels; `target` is N x 1 x H x W or 1 x H x W.
Tensor structure_weights(const Tensor& target);

/// Weighted BCE + weighted IoU, averaged over the batch. The target is a
/// constant: no gradient flows into it.
Tensor structure_aware_loss(const Tensor& s, const Tensor& target);

}  // namespace mistseg::pipeline
