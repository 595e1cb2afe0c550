#include "cmx/synthetic.hpp"

#include <cmath>
#include <stdexcept>

#include "cmx/rng.hpp"

namespace cmx {

namespace {

constexpr std::uint32_t k_tile = 8;
constexpr float k_jitter = 0.02f;
constexpr double k_two_pi = 6.283185307179586;

}  // namespace

void palette_color(std::uint32_t k, std::uint32_t num_classes, float rgb_out[3]) {
    const double phase = k_two_pi * static_cast<double>(k) / static_cast<double>(num_classes);
    rgb_out[0] = static_cast<float>(0.5 + 0.45 * std::cos(phase));
    rgb_out[1] = static_cast<float>(0.5 + 0.45 * std::cos(phase + k_two_pi / 3.0));
    rgb_out[2] = static_cast<float>(0.5 + 0.45 * std::cos(phase + 2.0 * k_two_pi / 3.0));
}

float class_band(std::uint32_t k, std::uint32_t num_classes) {
    return (static_cast<float>(k) + 0.5f) / static_cast<float>(num_classes);
}

std::uint32_t palette_lookup(const float rgb[3], std::uint32_t num_classes) {
    std::uint32_t best = 0;
    float best_d2 = 1e30f;
    for (std::uint32_t k = 0; k < num_classes; ++k) {
        float ref[3];
        palette_color(k, num_classes, ref);
        float d2 = 0;
        for (int c = 0; c < 3; ++c) d2 += (rgb[c] - ref[c]) * (rgb[c] - ref[c]);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = k;
        }
    }
    return best;
}

std::vector<SyntheticScene> gen_synthetic(std::size_t n, std::uint32_t height, std::uint32_t width,
                                          std::uint32_t num_classes, double ambiguity,
                                          std::uint64_t seed) {
    if (height % k_tile != 0 || width % k_tile != 0) {
        throw std::invalid_argument("gen_synthetic: scene size must be divisible by 8");
    }
    if (ambiguity < 0 || ambiguity > 1) {
        throw std::invalid_argument("gen_synthetic: ambiguity must be in [0,1]");
    }
    const std::uint32_t th = height / k_tile, tw = width / k_tile;
    const std::uint32_t n_tiles = th * tw;
    const auto n_ambiguous =
        static_cast<std::uint32_t>(std::lround(ambiguity * static_cast<double>(n_tiles)));

    std::vector<SyntheticScene> scenes;
    scenes.reserve(n);
    Rng root(seed);
    for (std::size_t s = 0; s < n; ++s) {
        Rng rng = root.split(s);
        SyntheticScene scene;
        scene.seed = rng.seed();
        scene.rgb = Tensor({height, width, 3});
        scene.x_modality = Tensor({height, width, 3});
        scene.labels = Tensor({height, width});

        std::vector<std::uint32_t> tile_class(n_tiles), tile_color(n_tiles);
        std::vector<std::uint32_t> order(n_tiles);
        for (std::uint32_t t = 0; t < n_tiles; ++t) {
            tile_class[t] = static_cast<std::uint32_t>(rng.next_below(num_classes));
            tile_color[t] = tile_class[t];
            order[t] = t;
        }
        // Fisher-Yates; the first n_ambiguous tiles get distractor colors.
        for (std::uint32_t t = n_tiles - 1; t > 0; --t) {
            const auto j = static_cast<std::uint32_t>(rng.next_below(t + 1));
            std::swap(order[t], order[j]);
        }
        for (std::uint32_t a = 0; a < n_ambiguous; ++a) {
            tile_color[order[a]] = static_cast<std::uint32_t>(rng.next_below(num_classes));
        }

        for (std::uint32_t y = 0; y < height; ++y) {
            for (std::uint32_t x = 0; x < width; ++x) {
                const std::uint32_t t = (y / k_tile) * tw + (x / k_tile);
                const std::uint32_t cls = tile_class[t];
                float color[3];
                palette_color(tile_color[t], num_classes, color);
                const float band = class_band(cls, num_classes);
                for (std::uint32_t c = 0; c < 3; ++c) {
                    scene.rgb.at3(y, x, c) = color[c] + rng.uniform(-k_jitter, k_jitter);
                    scene.x_modality.at3(y, x, c) = band + rng.uniform(-k_jitter, k_jitter);
                }
                scene.labels.at2(y, x) = static_cast<float>(cls);
            }
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

}  // namespace cmx
