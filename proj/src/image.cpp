#include "countgrid/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace countgrid {

double Image::mean() const {
    if (data.empty()) {
        return 0.0;
    }
    return std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
}

namespace {

int next_pnm_int(std::istream& in) {
    // Skips whitespace and '#' comment lines between header tokens.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') {
                c = in.get();
            }
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) {
        throw std::runtime_error("truncated PNM header");
    }
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) {
        throw std::runtime_error("malformed PNM header");
    }
    return value;
}

}  // namespace

Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open image file: " + path);
    }
    char magic[2] = {0, 0};
    in.read(magic, 2);
    int channels = 0;
    if (magic[0] == 'P' && magic[1] == '5') {
        channels = 1;
    } else if (magic[0] == 'P' && magic[1] == '6') {
        channels = 3;
    } else {
        throw std::runtime_error("unsupported image format (want P5/P6): " + path);
    }
    const int width = next_pnm_int(in);
    const int height = next_pnm_int(in);
    const int maxval = next_pnm_int(in);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        throw std::runtime_error("bad PNM dimensions in " + path);
    }
    const size_t n = static_cast<size_t>(width) * height * channels;
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) {
        throw std::runtime_error("truncated pixel data in " + path);
    }
    Image img(width, height, channels);
    const double scale = 1.0 / maxval;
    for (size_t i = 0; i < n; ++i) {
        img.data[i] = raw[i] * scale;
    }
    return img;
}

void write_pnm(const Image& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3) {
        throw std::runtime_error("write_pnm: channels must be 1 or 3");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write image file: " + path);
    }
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
    if (!out) {
        throw std::runtime_error("failed writing " + path);
    }
}

Image to_gray(const Image& img) {
    if (img.channels == 1) {
        return img;
    }
    Image gray(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            gray.at(x, y) = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                            0.114 * img.at(x, y, 2);
        }
    }
    return gray;
}

Image resize_bilinear(const Image& img, int new_width, int new_height) {
    if (new_width == img.width && new_height == img.height) {
        return img;
    }
    if (new_width <= 0 || new_height <= 0) {
        throw std::runtime_error("resize_bilinear: non-positive target size");
    }
    Image out(new_width, new_height, img.channels);
    const double sx = static_cast<double>(img.width) / new_width;
    const double sy = static_cast<double>(img.height) / new_height;
    for (int y = 0; y < new_height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < new_width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = img.at(x0, y0, c) * (1 - wx) + img.at(x1, y0, c) * wx;
                const double bot = img.at(x0, y1, c) * (1 - wx) + img.at(x1, y1, c) * wx;
                out.at(x, y, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace countgrid
