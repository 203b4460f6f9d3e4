#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "countgrid/geometry.hpp"
#include "countgrid/image.hpp"

namespace countgrid {

struct ImageRecord {
    std::string image_id;
    Image pixels;
    std::vector<Box> boxes;  // full ground truth, possibly empty

    int width() const { return pixels.width; }
    int height() const { return pixels.height; }
};

enum class Provenance { Seed, Propagated };

struct LabeledBox {
    Box box;
    Provenance provenance = Provenance::Seed;
    int stage = 1;  // stage at which the box entered the set (seeds: 1)
};

// Per-image label set L^s. Seed boxes are never removed across stages.
struct LabelSet {
    std::string image_id;
    std::vector<LabeledBox> boxes;
    int stage = 1;

    std::vector<Box> plain_boxes() const;
};

// nullopt means ALL.
struct SubsampleSpec {
    std::optional<int> num_images;      // C_i
    std::optional<int> boxes_per_image; // C_a
    uint64_t rng_seed = 0;
};

struct SubsampleResult {
    std::vector<std::pair<ImageRecord, LabelSet>> train;
    std::vector<ImageRecord> discarded;  // never used in training
};

struct SceneSpec {
    int image_size = 256;
    int objects_min = 18, objects_max = 22;
    double object_size_min = 13.0, object_size_max = 17.0;
    double object_intensity_min = 0.65, object_intensity_max = 0.9;
    double background_level = 0.25;
    double background_noise = 0.05;  // gaussian std dev
    double max_pairwise_iou = 0.05;
    uint64_t rng_seed = 0;
};

// JSON Lines annotations; one {"image", "width", "height", "boxes"} object
// per line, image paths relative to the annotation file. Loads pixels from
// the referenced PGM/PPM files and validates boxes against image bounds.
std::vector<ImageRecord> load_annotations(const std::string& path);

// Writes records as PGM files plus an annotations JSONL next to them.
void save_dataset(const std::vector<ImageRecord>& records, const std::string& out_dir,
                  const std::string& annotations_name = "annotations.jsonl");

// Uniformly picks C_i images and at most C_a seed boxes per image, without
// replacement, deterministic in rng_seed. Records are canonically sorted by
// image_id first so input order does not matter.
SubsampleResult subsample(std::vector<ImageRecord> records, const SubsampleSpec& spec);

// Textured rectangles on a noisy background; exact ground-truth boxes with
// pairwise IoU <= max_pairwise_iou via rejection sampling.
std::vector<ImageRecord> generate_scenes(const SceneSpec& spec, int count,
                                         const std::string& id_prefix = "scene");

// Same background texture, zero objects.
std::vector<ImageRecord> generate_background_pool(const SceneSpec& spec, int count);

}  // namespace countgrid
