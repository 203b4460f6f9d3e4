#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "countgrid/augment.hpp"
#include "countgrid/dataset.hpp"
#include "countgrid/detector.hpp"
#include "countgrid/metrics.hpp"
#include "countgrid/training.hpp"

namespace countgrid {

struct ModelSpec {
    int stride = 16;
    int receptive_field = 33;
    // anchor <= 0 means auto: median seed-box size at training start
    double anchor_w = 0.0;
    double anchor_h = 0.0;
    uint64_t init_seed = 0;
};

struct StageSchedule {
    int num_stages = 9;       // S
    double merge_score = 0.9;
    double merge_iou = 0.2;
    double quality_iou = 0.3;  // correctness threshold for stage logs
    bool warm_start = false;   // reuse previous stage weights instead of re-init
    TrainConfig stage_training;
    TrainConfig final_training;
};

struct StageLogEntry {
    int stage = 0;
    std::string image_id;
    long long expanded = 0;
    long long correct = 0;
};

struct StageLog {
    int stage = 0;
    std::vector<StageLogEntry> per_image;
    uint64_t model_checksum = 0;
};

struct PropagationResult {
    GridModel final_model;
    std::vector<LabelSet> final_labels;  // L^{S+1}, ordered as train_set
    std::vector<StageLog> logs;
};

// Score-descending greedy merge: a prediction is accepted iff its score is
// >= merge_score, its IoU with every box already in `current` is
// <= merge_iou, and its IoU with every previously accepted prediction is
// <= merge_iou. Existing boxes are always retained.
LabelSet merge_labels(const LabelSet& current, const std::vector<ScoredBox>& predictions,
                      double merge_score, double merge_iou, int stage);

// Stage loop: train the gated detector on L^s, predict on the original
// training images, merge confident detections into L^{s+1}, then train the
// final detector with the plain loss on L^{S+1}.
// When snapshot_dir is non-empty, label sets and stage logs are persisted
// there as JSON Lines after every stage.
PropagationResult run_propagation(const std::vector<std::pair<ImageRecord, LabelSet>>& train_set,
                                  const std::vector<ImageRecord>& background_pool,
                                  const StageSchedule& schedule, const AugmentConfig& augment_config,
                                  const ModelSpec& model_spec,
                                  const std::string& snapshot_dir = "");

std::pair<long long, std::vector<ScoredBox>> count_image(const Image& pixels,
                                                         const GridModel& model,
                                                         double threshold);

// Label-set snapshots mirror the annotation format plus provenance/stage.
void save_label_sets(const std::vector<LabelSet>& label_sets, const std::string& path);
std::vector<LabelSet> load_label_sets(const std::string& path);

void save_stage_logs(const std::vector<StageLog>& logs, const std::string& path);
std::vector<StageLog> load_stage_logs(const std::string& path);

}  // namespace countgrid
