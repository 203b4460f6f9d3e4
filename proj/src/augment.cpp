#include "countgrid/augment.hpp"

#include <algorithm>
#include <cmath>

#include "countgrid/errors.hpp"

namespace countgrid {

double sample_rotation(std::mt19937_64& rng, int* mode_out) {
    std::uniform_int_distribution<int> mode_dist(0, 3);
    std::uniform_int_distribution<int> quarter(1, 3);
    std::uniform_int_distribution<int> quarter0(0, 3);
    const int mode = mode_dist(rng);
    if (mode_out) {
        *mode_out = mode;
    }
    switch (mode) {
        case 0:
            return 0.0;
        case 1:
            return 90.0 * quarter(rng);
        case 2: {
            std::uniform_real_distribution<double> small(-10.0, 10.0);
            return small(rng) + 90.0 * quarter0(rng);
        }
        default: {
            std::uniform_real_distribution<double> any(0.0, 360.0);
            return any(rng);
        }
    }
}

Image rotate90k(const Image& img, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) {
        return img;
    }
    const int w = img.width, h = img.height;
    const bool swap = (k % 2) == 1;
    Image out(swap ? h : w, swap ? w : h, img.channels);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            int sx, sy;
            if (k == 1) {
                sx = w - 1 - y;
                sy = x;
            } else if (k == 2) {
                sx = w - 1 - x;
                sy = h - 1 - y;
            } else {
                sx = y;
                sy = h - 1 - x;
            }
            for (int c = 0; c < img.channels; ++c) {
                out.at(x, y, c) = img.at(sx, sy, c);
            }
        }
    }
    return out;
}

Box rotate_box90k(const Box& b, int quarter_turns, int width, int height) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    switch (k) {
        case 0:
            return b;
        case 1:
            return {b.y, width - b.x - b.w, b.h, b.w};
        case 2:
            return {width - b.x - b.w, height - b.y - b.h, b.w, b.h};
        default:
            return {height - b.y - b.h, b.x, b.h, b.w};
    }
}

namespace {

// Content rotation about the image center on a same-size canvas; samples
// out of bounds fall back to the image mean.
Image rotate_arbitrary(const Image& img, double degrees, double fill) {
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cx = img.width / 2.0, cy = img.height / 2.0;
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            // inverse map: rotate the output position by -degrees
            const double dx = (x + 0.5) - cx;
            const double dy = (y + 0.5) - cy;
            const double sxf = cx + cs * dx + sn * dy - 0.5;
            const double syf = cy - sn * dx + cs * dy - 0.5;
            const int x0 = static_cast<int>(std::floor(sxf));
            const int y0 = static_cast<int>(std::floor(syf));
            const double wx = sxf - x0;
            const double wy = syf - y0;
            for (int c = 0; c < img.channels; ++c) {
                auto sample = [&](int sx, int sy) {
                    if (sx < 0 || sy < 0 || sx >= img.width || sy >= img.height) {
                        return fill;
                    }
                    return img.at(sx, sy, c);
                };
                const double top = sample(x0, y0) * (1 - wx) + sample(x0 + 1, y0) * wx;
                const double bot = sample(x0, y0 + 1) * (1 - wx) + sample(x0 + 1, y0 + 1) * wx;
                out.at(x, y, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Box rotate_box_arbitrary(const Box& b, double degrees, double cx, double cy) {
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    const double xs[2] = {b.x, b.x2()};
    const double ys[2] = {b.y, b.y2()};
    for (double px : xs) {
        for (double py : ys) {
            const double dx = px - cx, dy = py - cy;
            const double rx = cx + cs * dx - sn * dy;
            const double ry = cy + sn * dx + cs * dy;
            min_x = std::min(min_x, rx);
            min_y = std::min(min_y, ry);
            max_x = std::max(max_x, rx);
            max_y = std::max(max_y, ry);
        }
    }
    return {min_x, min_y, max_x - min_x, max_y - min_y};
}

}  // namespace

AugmentedSample augment(const Image& pixels, const std::vector<LabeledBox>& labels,
                        const AugmentConfig& config, std::mt19937_64& rng) {
    Image img = pixels;
    std::vector<LabeledBox> boxes = labels;

    // 1. rotation
    if (config.rotation_enabled) {
        double angle = std::fmod(sample_rotation(rng), 360.0);
        if (angle < 0) {
            angle += 360.0;
        }
        const double quarters = angle / 90.0;
        const int k = static_cast<int>(std::lround(quarters));
        if (std::abs(quarters - k) < 1e-9) {
            const int w = img.width, h = img.height;
            img = rotate90k(img, k);
            for (auto& lb : boxes) {
                lb.box = rotate_box90k(lb.box, k, w, h);
            }
        } else {
            const double cx = img.width / 2.0, cy = img.height / 2.0;
            const double fill = img.mean();
            img = rotate_arbitrary(img, angle, fill);
            for (auto& lb : boxes) {
                lb.box = rotate_box_arbitrary(lb.box, angle, cx, cy);
            }
        }
    }

    // 2. resize so the long side hits the sampled target
    {
        std::uniform_real_distribution<double> target_dist(config.scale_long_side_min,
                                                           config.scale_long_side_max);
        const double target = target_dist(rng);
        const double long_side = std::max(img.width, img.height);
        const double scale = target / long_side;
        const int new_w = std::max(1, static_cast<int>(std::lround(img.width * scale)));
        const int new_h = std::max(1, static_cast<int>(std::lround(img.height * scale)));
        const double fx = static_cast<double>(new_w) / img.width;
        const double fy = static_cast<double>(new_h) / img.height;
        img = resize_bilinear(img, new_w, new_h);
        for (auto& lb : boxes) {
            lb.box = {lb.box.x * fx, lb.box.y * fy, lb.box.w * fx, lb.box.h * fy};
        }
    }

    // 3. aspect-ratio distortion (width only)
    {
        std::uniform_real_distribution<double> ratio_dist(config.aspect_jitter_min,
                                                          config.aspect_jitter_max);
        const double ratio = ratio_dist(rng);
        const int new_w = std::max(1, static_cast<int>(std::lround(img.width * ratio)));
        const double fx = static_cast<double>(new_w) / img.width;
        img = resize_bilinear(img, new_w, img.height);
        for (auto& lb : boxes) {
            lb.box.x *= fx;
            lb.box.w *= fx;
        }
    }

    // 4. crop (pad with the background mean when the image is smaller)
    {
        const int C = config.crop_size;
        const double fill = img.mean();
        int sx = 0, dx = 0, sy = 0, dy = 0;
        if (img.width > C) {
            sx = std::uniform_int_distribution<int>(0, img.width - C)(rng);
        } else if (img.width < C) {
            dx = std::uniform_int_distribution<int>(0, C - img.width)(rng);
        }
        if (img.height > C) {
            sy = std::uniform_int_distribution<int>(0, img.height - C)(rng);
        } else if (img.height < C) {
            dy = std::uniform_int_distribution<int>(0, C - img.height)(rng);
        }
        Image cropped(C, C, img.channels, fill);
        const int copy_w = std::min(C, img.width);
        const int copy_h = std::min(C, img.height);
        for (int y = 0; y < copy_h; ++y) {
            for (int x = 0; x < copy_w; ++x) {
                for (int c = 0; c < img.channels; ++c) {
                    cropped.at(dx + x, dy + y, c) = img.at(sx + x, sy + y, c);
                }
            }
        }
        img = std::move(cropped);

        std::vector<LabeledBox> kept;
        for (auto& lb : boxes) {
            const double pre_area = lb.box.area();
            Box b = lb.box;
            b.x = b.x - sx + dx;
            b.y = b.y - sy + dy;
            const double x0 = std::max(0.0, b.x);
            const double y0 = std::max(0.0, b.y);
            const double x1 = std::min(static_cast<double>(C), b.x2());
            const double y1 = std::min(static_cast<double>(C), b.y2());
            if (x1 <= x0 || y1 <= y0) {
                continue;
            }
            const Box clipped{x0, y0, x1 - x0, y1 - y0};
            if (clipped.area() < 0.3 * pre_area) {
                continue;
            }
            lb.box = clipped;
            kept.push_back(lb);
        }
        boxes = std::move(kept);
    }

    // 5. intensity jitter
    {
        std::uniform_real_distribution<double> add_dist(config.intensity_add_min,
                                                        config.intensity_add_max);
        std::uniform_real_distribution<double> mult_dist(config.intensity_mult_min,
                                                         config.intensity_mult_max);
        const double add = add_dist(rng);
        const double mult = mult_dist(rng);
        if (add != 0.0 || mult != 1.0) {
            for (double& v : img.data) {
                v = std::clamp(v * mult + add, 0.0, 1.0);
            }
        }
    }

    return {std::move(img), std::move(boxes)};
}

}  // namespace countgrid
