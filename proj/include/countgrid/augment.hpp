#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "countgrid/dataset.hpp"
#include "countgrid/image.hpp"

namespace countgrid {

struct AugmentConfig {
    // Target long side after resize, sampled uniformly.
    double scale_long_side_min = 832.0;
    double scale_long_side_max = 1664.0;
    int crop_size = 416;
    // Width multiplier sampled uniformly.
    double aspect_jitter_min = 1.0;
    double aspect_jitter_max = 1.0;
    // pixel' = pixel * mult + add, clamped to [0, 1].
    double intensity_add_min = 0.0;
    double intensity_add_max = 0.0;
    double intensity_mult_min = 1.0;
    double intensity_mult_max = 1.0;
    bool rotation_enabled = true;
    uint64_t rng_seed = 0;
};

struct AugmentedSample {
    Image pixels;
    std::vector<LabeledBox> boxes;
};

// Bucketed rotation: 25% exactly 0; 25% one of {90, 180, 270};
// 25% uniform [-10, 10] plus one of {0, 90, 180, 270}; 25% uniform [0, 360).
// mode_out, when non-null, receives the chosen bucket (0-3).
double sample_rotation(std::mt19937_64& rng, int* mode_out = nullptr);

// Rotation by an exact multiple of 90 degrees; output dimensions swap for
// odd multiples, pixels are permuted bit-exactly.
Image rotate90k(const Image& img, int quarter_turns);
Box rotate_box90k(const Box& b, int quarter_turns, int width, int height);

// Pipeline order: rotation, resize, aspect distortion, crop, intensity
// jitter. Boxes become the axis-aligned hull of their rotated corners, are
// clipped to the crop, and are dropped when their clipped area falls below
// 30% of the pre-crop area. Crops larger than the image pad with the
// background mean. Deterministic given the rng state.
AugmentedSample augment(const Image& pixels, const std::vector<LabeledBox>& labels,
                        const AugmentConfig& config, std::mt19937_64& rng);

}  // namespace countgrid
