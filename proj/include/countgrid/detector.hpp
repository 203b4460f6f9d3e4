#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "countgrid/dataset.hpp"
#include "countgrid/geometry.hpp"
#include "countgrid/image.hpp"

namespace countgrid {

// Head order within the flat weight vector.
enum Head { kObjectiveness = 0, kOffsetX, kOffsetY, kSizeW, kSizeH, kNumHeads };

// Affine scorer/regressors over normalized raw patches. One anchor per
// cell; predicted sizes are clipped to 8x the anchor.
struct GridModel {
    int stride = 16;
    int receptive_field = 33;  // square patch side, >= stride
    double anchor_w = 16.0;
    double anchor_h = 16.0;
    std::vector<double> weights;  // kNumHeads * feature_dim

    int feature_dim() const { return receptive_field * receptive_field + 1; }
    std::span<double> head(int h) {
        return {weights.data() + static_cast<size_t>(h) * feature_dim(),
                static_cast<size_t>(feature_dim())};
    }
    std::span<const double> head(int h) const {
        return {weights.data() + static_cast<size_t>(h) * feature_dim(),
                static_cast<size_t>(feature_dim())};
    }
    int grid_w(int image_width) const { return image_width / stride; }
    int grid_h(int image_height) const { return image_height / stride; }
};

// Uniform weights in [-0.01, 0.01], biases 0 except the objectiveness bias
// at -2 so initial scores start near background.
GridModel init_model(int stride, int receptive_field, double anchor_w, double anchor_h,
                     uint64_t rng_seed);

// Median (w, h) of the given boxes; used to pin the anchor at training start.
std::pair<double, double> median_box_size(const std::vector<LabeledBox>& boxes);

struct GridAssignment {
    int grid_w = 0, grid_h = 0;
    std::vector<int8_t> positive;                   // f_hat per cell, row-major
    std::vector<std::array<double, 4>> targets;     // raw-space regression targets
};

struct ObjectivenessMap {
    int grid_w = 0, grid_h = 0;
    std::vector<double> scores;  // sigmoid objectiveness per cell
    std::vector<Box> boxes;      // decoded box per cell
};

double sigmoid(double z);

// R x R patch centered on the cell center, zero-padded outside the image,
// normalized to zero mean and unit std (constant patches become all zeros),
// with a trailing bias 1. out must have feature_dim() elements.
void extract_patch(const Image& pixels, int cell_x, int cell_y, const GridModel& model,
                   std::span<double> out);

ObjectivenessMap forward(const Image& pixels, const GridModel& model);

// The cell containing a label-box center becomes positive (half-open cells:
// centers on a boundary go right/below); ties inside one cell go to the
// larger-area box. Targets invert the decode transform exactly.
GridAssignment assign_targets(const std::vector<LabeledBox>& labels, int image_width,
                              int image_height, const GridModel& model);

// forward, score floor, then NMS; sorted by score descending.
std::vector<ScoredBox> predict(const Image& pixels, const GridModel& model,
                               double score_floor, double nms_iou = 0.2);

// Binary checkpoint: magic, geometry, anchor, then little-endian doubles.
void save_model(const GridModel& model, const std::string& path);
GridModel load_model(const std::string& path);

uint64_t model_checksum(const GridModel& model);

}  // namespace countgrid
