#include "countgrid/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "countgrid/errors.hpp"

namespace countgrid {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

namespace {

constexpr char kMagic[8] = {'C', 'G', 'R', 'I', 'D', 'M', 'D', '1'};
constexpr double kMaxSizeFactorLog = 2.0794415416798357;  // ln 8

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

GridModel init_model(int stride, int receptive_field, double anchor_w, double anchor_h,
                     uint64_t rng_seed) {
    if (receptive_field < stride) {
        throw ConfigError("init_model: receptive_field must be >= stride");
    }
    GridModel model;
    model.stride = stride;
    model.receptive_field = receptive_field;
    model.anchor_w = anchor_w;
    model.anchor_h = anchor_h;
    model.weights.assign(static_cast<size_t>(kNumHeads) * model.feature_dim(), 0.0);
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> init(-0.01, 0.01);
    const int D = model.feature_dim();
    for (int h = 0; h < kNumHeads; ++h) {
        auto head = model.head(h);
        for (int i = 0; i < D - 1; ++i) {
            head[i] = init(rng);
        }
        head[D - 1] = 0.0;
    }
    model.head(kObjectiveness)[D - 1] = -2.0;
    return model;
}

std::pair<double, double> median_box_size(const std::vector<LabeledBox>& boxes) {
    if (boxes.empty()) {
        throw DataError("median_box_size: no boxes");
    }
    std::vector<double> ws, hs;
    for (const auto& lb : boxes) {
        ws.push_back(lb.box.w);
        hs.push_back(lb.box.h);
    }
    auto median = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        const size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    return {median(ws), median(hs)};
}

void extract_patch(const Image& pixels, int cell_x, int cell_y, const GridModel& model,
                   std::span<double> out) {
    const int R = model.receptive_field;
    const int half = R / 2;
    const int cx = cell_x * model.stride + model.stride / 2;
    const int cy = cell_y * model.stride + model.stride / 2;
    const int D = model.feature_dim();

    double sum = 0.0, sq_sum = 0.0;
    int in_count = 0;
    int idx = 0;
    for (int dy = -half; dy < R - half; ++dy) {
        const int y = cy + dy;
        for (int dx = -half; dx < R - half; ++dx, ++idx) {
            const int x = cx + dx;
            if (x < 0 || y < 0 || x >= pixels.width || y >= pixels.height) {
                out[idx] = 0.0;
            } else {
                const double v = pixels.at(x, y);
                out[idx] = v;
                sum += v;
                sq_sum += v * v;
                ++in_count;
            }
        }
    }
    double mean = 0.0, stddev = 0.0;
    if (in_count > 0) {
        mean = sum / in_count;
        stddev = std::sqrt(std::max(0.0, sq_sum / in_count - mean * mean));
    }
    if (stddev > 0.0) {
        // normalize in-image samples; out-of-image positions stay exactly zero
        idx = 0;
        for (int dy = -half; dy < R - half; ++dy) {
            const int y = cy + dy;
            for (int dx = -half; dx < R - half; ++dx, ++idx) {
                const int x = cx + dx;
                if (x >= 0 && y >= 0 && x < pixels.width && y < pixels.height) {
                    out[idx] = (out[idx] - mean) / stddev;
                }
            }
        }
    } else {
        std::fill(out.begin(), out.begin() + R * R, 0.0);
    }
    out[D - 1] = 1.0;  // bias
}

namespace {

double dot(std::span<const double> w, std::span<const double> x) {
    // four accumulators let the compiler vectorize; the summation order is
    // still fixed, so results stay deterministic
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    const size_t n4 = w.size() & ~size_t{3};
    for (size_t i = 0; i < n4; i += 4) {
        a0 += w[i] * x[i];
        a1 += w[i + 1] * x[i + 1];
        a2 += w[i + 2] * x[i + 2];
        a3 += w[i + 3] * x[i + 3];
    }
    double acc = (a0 + a1) + (a2 + a3);
    for (size_t i = n4; i < w.size(); ++i) {
        acc += w[i] * x[i];
    }
    return acc;
}

Box decode_box(const GridModel& model, int cell_x, int cell_y, double ztx, double zty,
               double ztw, double zth) {
    const double cx = cell_x * model.stride + sigmoid(ztx) * model.stride;
    const double cy = cell_y * model.stride + sigmoid(zty) * model.stride;
    const double w = model.anchor_w * std::exp(std::min(ztw, kMaxSizeFactorLog));
    const double h = model.anchor_h * std::exp(std::min(zth, kMaxSizeFactorLog));
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
}

}  // namespace

ObjectivenessMap forward(const Image& pixels, const GridModel& model) {
    ObjectivenessMap map;
    map.grid_w = model.grid_w(pixels.width);
    map.grid_h = model.grid_h(pixels.height);
    if (map.grid_w < 1 || map.grid_h < 1) {
        throw DataError("forward: image smaller than one grid cell");
    }
    map.scores.resize(static_cast<size_t>(map.grid_w) * map.grid_h);
    map.boxes.resize(map.scores.size());
    std::vector<double> feat(model.feature_dim());
    for (int gy = 0; gy < map.grid_h; ++gy) {
        for (int gx = 0; gx < map.grid_w; ++gx) {
            extract_patch(pixels, gx, gy, model, feat);
            const size_t i = static_cast<size_t>(gy) * map.grid_w + gx;
            map.scores[i] = sigmoid(dot(model.head(kObjectiveness), feat));
            map.boxes[i] = decode_box(model, gx, gy, dot(model.head(kOffsetX), feat),
                                      dot(model.head(kOffsetY), feat),
                                      dot(model.head(kSizeW), feat),
                                      dot(model.head(kSizeH), feat));
        }
    }
    return map;
}

GridAssignment assign_targets(const std::vector<LabeledBox>& labels, int image_width,
                              int image_height, const GridModel& model) {
    GridAssignment a;
    a.grid_w = model.grid_w(image_width);
    a.grid_h = model.grid_h(image_height);
    const size_t cells = static_cast<size_t>(a.grid_w) * a.grid_h;
    a.positive.assign(cells, 0);
    a.targets.assign(cells, {0.0, 0.0, 0.0, 0.0});
    std::vector<double> owner_area(cells, -1.0);

    // clamping the offsets keeps the logit targets bounded (|logit| <= ~3.9);
    // the decode error this introduces is at most 0.02 * stride pixels
    constexpr double kOffsetEps = 0.02;
    for (const auto& lb : labels) {
        const double cx = lb.box.cx();
        const double cy = lb.box.cy();
        int gx = static_cast<int>(std::floor(cx / model.stride));
        int gy = static_cast<int>(std::floor(cy / model.stride));
        gx = std::clamp(gx, 0, a.grid_w - 1);
        gy = std::clamp(gy, 0, a.grid_h - 1);
        const size_t i = static_cast<size_t>(gy) * a.grid_w + gx;
        if (a.positive[i] && owner_area[i] >= lb.box.area()) {
            continue;
        }
        const double offx =
            std::clamp((cx - gx * model.stride) / model.stride, kOffsetEps, 1.0 - kOffsetEps);
        const double offy =
            std::clamp((cy - gy * model.stride) / model.stride, kOffsetEps, 1.0 - kOffsetEps);
        a.positive[i] = 1;
        owner_area[i] = lb.box.area();
        a.targets[i] = {logit(offx), logit(offy), std::log(lb.box.w / model.anchor_w),
                        std::log(lb.box.h / model.anchor_h)};
    }
    return a;
}

std::vector<ScoredBox> predict(const Image& pixels, const GridModel& model,
                               double score_floor, double nms_iou) {
    const ObjectivenessMap map = forward(pixels, model);
    std::vector<ScoredBox> candidates;
    for (size_t i = 0; i < map.scores.size(); ++i) {
        if (map.scores[i] >= score_floor) {
            candidates.push_back({map.boxes[i], map.scores[i]});
        }
    }
    return nms(std::move(candidates), nms_iou);
}

namespace {

std::string serialize_model(const GridModel& model) {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, sizeof(kMagic));
    const int32_t stride = model.stride;
    const int32_t rf = model.receptive_field;
    out.write(reinterpret_cast<const char*>(&stride), sizeof(stride));
    out.write(reinterpret_cast<const char*>(&rf), sizeof(rf));
    out.write(reinterpret_cast<const char*>(&model.anchor_w), sizeof(double));
    out.write(reinterpret_cast<const char*>(&model.anchor_h), sizeof(double));
    const uint64_t count = model.weights.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(model.weights.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
    return out.str();
}

}  // namespace

void save_model(const GridModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write model checkpoint: " + path);
    }
    const std::string bytes = serialize_model(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("failed writing model checkpoint: " + path);
    }
}

GridModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open model checkpoint: " + path);
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("bad model checkpoint magic in " + path);
    }
    GridModel model;
    int32_t stride = 0, rf = 0;
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&stride), sizeof(stride));
    in.read(reinterpret_cast<char*>(&rf), sizeof(rf));
    in.read(reinterpret_cast<char*>(&model.anchor_w), sizeof(double));
    in.read(reinterpret_cast<char*>(&model.anchor_h), sizeof(double));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    model.stride = stride;
    model.receptive_field = rf;
    if (!in || count != static_cast<uint64_t>(kNumHeads) * model.feature_dim()) {
        throw DataError("corrupt model checkpoint: " + path);
    }
    model.weights.resize(count);
    in.read(reinterpret_cast<char*>(model.weights.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) {
        throw DataError("truncated model checkpoint: " + path);
    }
    return model;
}

uint64_t model_checksum(const GridModel& model) {
    const std::string bytes = serialize_model(model);
    uint64_t hash = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

}  // namespace countgrid
