#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace countgrid {

// Planar-less interleaved image, intensities in [0, 1].
// channels is 1 (gray) or 3 (RGB).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    double& at(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool empty() const { return data.empty(); }
    double mean() const;
};

// Binary PGM (P5) / PPM (P6), 8-bit, maxval 255.
Image read_pnm(const std::string& path);
void write_pnm(const Image& img, const std::string& path);

Image to_gray(const Image& img);

// Bilinear resize; an identity-size request returns the input untouched.
Image resize_bilinear(const Image& img, int new_width, int new_height);

}  // namespace countgrid
