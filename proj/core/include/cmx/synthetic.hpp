#pragma once

#include <cstdint>
#include <vector>

#include "cmx/tensor.hpp"

namespace cmx {

/// One generated scene: region-colored rgb, class-banded x modality, labels.
/// In ambiguous regions the rgb color is a class-independent distractor, so the
/// class is recoverable only from x_modality there.
struct SyntheticScene {
    Tensor rgb;         // H x W x 3
    Tensor x_modality;  // H x W x 3
    Tensor labels;      // H x W class ids
    std::uint64_t seed = 0;
};

/// Reference color of class k; scenes paint unambiguous regions with exactly
/// this color plus bounded jitter, so nearest-palette lookup recovers the class.
void palette_color(std::uint32_t k, std::uint32_t num_classes, float rgb_out[3]);

/// Class-coded intensity band used in the x modality: (k + 0.5) / K.
float class_band(std::uint32_t k, std::uint32_t num_classes);

/// Nearest-palette classifier, the generator's own rgb key.
std::uint32_t palette_lookup(const float rgb[3], std::uint32_t num_classes);

/// Deterministic scenes on an 8x8-tile grid (H, W divisible by 8). Exactly
/// round(ambiguity * n_tiles) tiles per scene are ambiguous. Scene i depends
/// only on (seed, i), so extending n never changes earlier scenes.
std::vector<SyntheticScene> gen_synthetic(std::size_t n, std::uint32_t height, std::uint32_t width,
                                          std::uint32_t num_classes, double ambiguity,
                                          std::uint64_t seed);

}  // namespace cmx
