#pragma once

#include <cstddef>
#include <vector>

namespace tspnet {

/// One windowed segment: frames [start, start + width) at a given scale.
struct SegmentIndex {
  std::size_t scale = 0;
  std::size_t index = 0;
  std::size_t start = 0;
  std::size_t width = 0;

  std::size_t end() const { return start + width; }
  friend bool operator==(const SegmentIndex&, const SegmentIndex&) = default;
};

/// Geometry of every windowed segment of one video across all scales.
///
/// Each scale holds exactly `pivot_count` segments; the k-th starts at
/// k·stride. The pivot count follows from covering the video with the
/// smallest width, and the video is padded (by repeating its last frame)
/// to `padded_length` so the widest scale also fits.
struct MultiScaleLayout {
  std::size_t original_length = 0;
  std::vector<std::size_t> widths;
  std::size_t stride = 0;
  std::size_t pivot_count = 0;
  std::size_t padded_length = 0;

  std::size_t num_scales() const { return widths.size(); }
  /// Flat position of (scale, index) in scale-major order.
  std::size_t flat(std::size_t scale, std::size_t index) const { return scale * pivot_count + index; }
  std::size_t total_segments() const { return widths.size() * pivot_count; }
};

/// Pivot-centred set of segments. Member 0 is always the pivot.
struct Neighborhood {
  SegmentIndex pivot;
  std::vector<SegmentIndex> members;
  bool extended = false;
};

/// L = ⌊(max(N, w₀) − w₀)/s⌋ + 1, padded_length = (L − 1)·s + w_{M−1}.
/// Throws ConfigError on empty or non-ascending widths, zero stride, N = 0.
MultiScaleLayout plan_layout(std::size_t frames, const std::vector<std::size_t>& widths, std::size_t stride);

std::vector<SegmentIndex> windowing_segments(const MultiScaleLayout& layout, std::size_t scale);

SegmentIndex segment_at(const MultiScaleLayout& layout, std::size_t scale, std::size_t index);

/// Pivot plus every larger-scale segment whose frames contain the pivot's,
/// ordered by (scale, index).
Neighborhood surrounding_neighborhood(const MultiScaleLayout& layout, std::size_t pivot);

/// Surrounding neighborhood united with all scale-0 segments; the pivot
/// appears once, first. Remaining members are ordered by (scale, index).
Neighborhood extended_surrounding_neighborhood(const MultiScaleLayout& layout, std::size_t pivot);

}  // namespace tspnet
