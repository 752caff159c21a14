#include "tspnet/segmenter.hpp"

#include <algorithm>
#include <string>

#include "tspnet/errors.hpp"

namespace tspnet {

MultiScaleLayout plan_layout(std::size_t frames, const std::vector<std::size_t>& widths, std::size_t stride) {
  if (frames == 0) throw ConfigError("frames", "video has no frames");
  if (widths.empty()) throw ConfigError("widths", "at least one window width is required");
  if (stride == 0) throw ConfigError("stride", "stride must be positive");
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] == 0) throw ConfigError("widths", "window widths must be positive");
    if (i > 0 && widths[i] <= widths[i - 1]) {
      throw ConfigError("widths", "window widths must be strictly ascending");
    }
  }
  MultiScaleLayout layout;
  layout.original_length = frames;
  layout.widths = widths;
  layout.stride = stride;
  const std::size_t w0 = widths.front();
  layout.pivot_count = (std::max(frames, w0) - w0) / stride + 1;
  layout.padded_length = (layout.pivot_count - 1) * stride + widths.back();
  return layout;
}

SegmentIndex segment_at(const MultiScaleLayout& layout, std::size_t scale, std::size_t index) {
  if (scale >= layout.num_scales()) {
    throw PreconditionError("scale " + std::to_string(scale) + " outside [0, " +
                            std::to_string(layout.num_scales()) + ")");
  }
  if (index >= layout.pivot_count) {
    throw PreconditionError("segment index " + std::to_string(index) + " outside [0, " +
                            std::to_string(layout.pivot_count) + ")");
  }
  return {scale, index, index * layout.stride, layout.widths[scale]};
}

std::vector<SegmentIndex> windowing_segments(const MultiScaleLayout& layout, std::size_t scale) {
  std::vector<SegmentIndex> out;
  out.reserve(layout.pivot_count);
  for (std::size_t k = 0; k < layout.pivot_count; ++k) out.push_back(segment_at(layout, scale, k));
  return out;
}

Neighborhood surrounding_neighborhood(const MultiScaleLayout& layout, std::size_t pivot) {
  Neighborhood nb;
  nb.pivot = segment_at(layout, 0, pivot);
  nb.members.push_back(nb.pivot);
  const std::size_t s = layout.stride;
  for (std::size_t scale = 1; scale < layout.num_scales(); ++scale) {
    const std::size_t w = layout.widths[scale];
    // j·s ≤ k·s and k·s + w₀ ≤ j·s + w  ⇔  j ∈ [⌈(k·s + w₀ − w)/s⌉, k]
    const std::size_t pivot_end = nb.pivot.end();
    const std::size_t lo = pivot_end > w ? (pivot_end - w + s - 1) / s : 0;
    for (std::size_t j = lo; j <= pivot; ++j) nb.members.push_back(segment_at(layout, scale, j));
  }
  return nb;
}

Neighborhood extended_surrounding_neighborhood(const MultiScaleLayout& layout, std::size_t pivot) {
  Neighborhood local = surrounding_neighborhood(layout, pivot);
  Neighborhood nb;
  nb.pivot = local.pivot;
  nb.extended = true;
  nb.members.reserve(local.members.size() + layout.pivot_count - 1);
  nb.members.push_back(local.pivot);
  for (std::size_t k = 0; k < layout.pivot_count; ++k) {
    if (k != pivot) nb.members.push_back(segment_at(layout, 0, k));
  }
  nb.members.insert(nb.members.end(), local.members.begin() + 1, local.members.end());
  return nb;
}

}  // namespace tspnet
