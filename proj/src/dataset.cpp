#include "countgrid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "countgrid/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace countgrid {

std::vector<Box> LabelSet::plain_boxes() const {
    std::vector<Box> out;
    out.reserve(boxes.size());
    for (const auto& lb : boxes) {
        out.push_back(lb.box);
    }
    return out;
}

namespace {

void validate_box(const Box& b, double width, double height, const std::string& image_id) {
    if (!b.valid()) {
        throw DataError("invalid box (w,h must be positive and finite) in image " + image_id);
    }
    if (b.x < 0 || b.y < 0 || b.x2() > width || b.y2() > height) {
        throw DataError("box out of image bounds in image " + image_id);
    }
}

std::string id_from_rel_path(const std::string& rel) {
    fs::path p(rel);
    fs::path stem = p.parent_path() / p.stem();
    return stem.generic_string();
}

}  // namespace

std::vector<ImageRecord> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open annotation file: " + path);
    }
    const fs::path base = fs::path(path).parent_path();
    std::vector<ImageRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": malformed annotation line: " + e.what());
        }
        if (!j.is_object() || !j.contains("image") || !j.contains("width") ||
            !j.contains("height") || !j.contains("boxes")) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": annotation line missing required keys");
        }
        ImageRecord rec;
        const std::string rel = j["image"].get<std::string>();
        rec.image_id = id_from_rel_path(rel);
        const double width = j["width"].get<double>();
        const double height = j["height"].get<double>();
        for (const auto& jb : j["boxes"]) {
            Box b{jb["x"].get<double>(), jb["y"].get<double>(),
                  jb["w"].get<double>(), jb["h"].get<double>()};
            validate_box(b, width, height, rec.image_id);
            rec.boxes.push_back(b);
        }
        rec.pixels = read_pnm((base / rel).string());
        if (rec.pixels.width != static_cast<int>(width) ||
            rec.pixels.height != static_cast<int>(height)) {
            throw DataError("image size mismatch for " + rec.image_id);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void save_dataset(const std::vector<ImageRecord>& records, const std::string& out_dir,
                  const std::string& annotations_name) {
    fs::create_directories(out_dir);
    std::ofstream ann(fs::path(out_dir) / annotations_name);
    if (!ann) {
        throw DataError("cannot write annotations in " + out_dir);
    }
    for (const auto& rec : records) {
        const std::string ext = rec.pixels.channels == 1 ? ".pgm" : ".ppm";
        const std::string file = rec.image_id + ext;
        write_pnm(rec.pixels, (fs::path(out_dir) / file).string());
        json jboxes = json::array();
        for (const auto& b : rec.boxes) {
            jboxes.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
        }
        json j{{"image", file},
               {"width", rec.width()},
               {"height", rec.height()},
               {"boxes", jboxes}};
        ann << j.dump() << "\n";
    }
}

SubsampleResult subsample(std::vector<ImageRecord> records, const SubsampleSpec& spec) {
    std::sort(records.begin(), records.end(),
              [](const ImageRecord& a, const ImageRecord& b) { return a.image_id < b.image_id; });
    const int total = static_cast<int>(records.size());
    const int keep = spec.num_images ? *spec.num_images : total;
    if (keep > total) {
        throw DataError("subsample: num_images exceeds available records");
    }
    std::mt19937_64 rng(spec.rng_seed);

    std::vector<int> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = static_cast<int>(i);
    }
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> selected(order.begin(), order.begin() + keep);
    std::sort(selected.begin(), selected.end());

    SubsampleResult result;
    std::vector<char> is_selected(records.size(), 0);
    for (int idx : selected) {
        is_selected[idx] = 1;
    }
    for (int idx : selected) {
        ImageRecord& rec = records[idx];
        LabelSet labels;
        labels.image_id = rec.image_id;
        labels.stage = 1;
        std::vector<int> box_order(rec.boxes.size());
        for (size_t i = 0; i < box_order.size(); ++i) {
            box_order[i] = static_cast<int>(i);
        }
        std::shuffle(box_order.begin(), box_order.end(), rng);
        const int nseeds = spec.boxes_per_image
                               ? std::min<int>(*spec.boxes_per_image,
                                               static_cast<int>(rec.boxes.size()))
                               : static_cast<int>(rec.boxes.size());
        std::vector<int> picked(box_order.begin(), box_order.begin() + nseeds);
        std::sort(picked.begin(), picked.end());
        for (int bi : picked) {
            labels.boxes.push_back({rec.boxes[bi], Provenance::Seed, 1});
        }
        result.train.emplace_back(std::move(rec), std::move(labels));
    }
    for (size_t i = 0; i < records.size(); ++i) {
        if (!is_selected[i]) {
            result.discarded.push_back(std::move(records[i]));
        }
    }
    return result;
}

namespace {

ImageRecord generate_one(const SceneSpec& spec, std::mt19937_64& rng,
                         const std::string& image_id, int num_objects) {
    ImageRecord rec;
    rec.image_id = image_id;
    const int size = spec.image_size;
    rec.pixels = Image(size, size, 1);

    std::normal_distribution<double> noise(0.0, spec.background_noise);
    for (double& v : rec.pixels.data) {
        v = std::clamp(spec.background_level + noise(rng), 0.0, 1.0);
    }

    std::uniform_real_distribution<double> size_dist(spec.object_size_min, spec.object_size_max);
    std::uniform_real_distribution<double> intensity_dist(spec.object_intensity_min,
                                                          spec.object_intensity_max);
    std::uniform_real_distribution<double> texture(-0.08, 0.08);

    const int attempt_budget = 1000;
    for (int obj = 0; obj < num_objects; ++obj) {
        bool placed = false;
        for (int attempt = 0; attempt < attempt_budget && !placed; ++attempt) {
            const int w = static_cast<int>(std::lround(size_dist(rng)));
            const int h = static_cast<int>(std::lround(size_dist(rng)));
            if (w >= size || h >= size) {
                continue;
            }
            std::uniform_int_distribution<int> xpos(0, size - w);
            std::uniform_int_distribution<int> ypos(0, size - h);
            const Box candidate{static_cast<double>(xpos(rng)), static_cast<double>(ypos(rng)),
                                static_cast<double>(w), static_cast<double>(h)};
            bool ok = true;
            for (const auto& b : rec.boxes) {
                if (iou(candidate, b) > spec.max_pairwise_iou) {
                    ok = false;
                    break;
                }
            }
            if (!ok) {
                continue;
            }
            const double intensity = intensity_dist(rng);
            const int x0 = static_cast<int>(candidate.x);
            const int y0 = static_cast<int>(candidate.y);
            for (int y = y0; y < y0 + h; ++y) {
                for (int x = x0; x < x0 + w; ++x) {
                    rec.pixels.at(x, y) = std::clamp(intensity + texture(rng), 0.0, 1.0);
                }
            }
            rec.boxes.push_back(candidate);
            placed = true;
        }
        if (!placed) {
            throw DataError("scene generation failed to place object " +
                            std::to_string(obj + 1) + " in " + image_id +
                            "; lower the object density or max_pairwise_iou");
        }
    }
    return rec;
}

std::string padded_id(const std::string& prefix, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%05d", index);
    return prefix + buf;
}

}  // namespace

std::vector<ImageRecord> generate_scenes(const SceneSpec& spec, int count,
                                         const std::string& id_prefix) {
    if (spec.objects_min > spec.objects_max || spec.object_size_min > spec.object_size_max) {
        throw ConfigError("scene spec ranges are degenerate");
    }
    std::mt19937_64 rng(spec.rng_seed);
    std::uniform_int_distribution<int> count_dist(spec.objects_min, spec.objects_max);
    std::vector<ImageRecord> records;
    records.reserve(count);
    for (int i = 0; i < count; ++i) {
        records.push_back(generate_one(spec, rng, padded_id(id_prefix, i), count_dist(rng)));
    }
    return records;
}

std::vector<ImageRecord> generate_background_pool(const SceneSpec& spec, int count) {
    std::mt19937_64 rng(spec.rng_seed);
    std::vector<ImageRecord> records;
    records.reserve(count);
    for (int i = 0; i < count; ++i) {
        records.push_back(generate_one(spec, rng, padded_id("background", i), 0));
    }
    return records;
}

}  // namespace countgrid
