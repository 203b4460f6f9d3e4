#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "countgrid/augment.hpp"
#include "countgrid/dataset.hpp"
#include "countgrid/metrics.hpp"
#include "countgrid/propagation.hpp"

namespace countgrid {

enum class RunMode { Od, Pfod };

struct RunConfig {
    std::string train_annotations;
    std::string background_annotations;  // optional
    std::string test_annotations;
    std::string output_dir;
    SubsampleSpec subsample;
    ModelSpec model;
    StageSchedule schedule;
    AugmentConfig augment;
    std::vector<double> metric_grid;     // defaults to 0.05..0.70
    double eval_score_floor = 0.05;
    double eval_nms_iou = 0.2;
    double test_resize_area = 0.0;       // 0 = predict at native size
};

// Parses a RunConfig JSON file; overrides are dotted-path assignments like
// "schedule.num_stages=3" applied before validation. Validation failures
// are collected and reported together as a ConfigError.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

// generate: synthetic benchmark (scenes + background pool) under out_dir.
void run_generate(const SceneSpec& spec, const std::string& out_dir, int count,
                  int background_count);
SceneSpec load_scene_spec(const std::string& path);

struct RunArtifacts {
    EvalReport report;
    std::string model_path;
    std::string eval_path;
    std::string manifest_path;
};

// od: subsample, single plain-loss training with the background pool,
// evaluate. pfod: full stage-wise propagation, then evaluate the final
// detector. Writes model checkpoint, predictions, label snapshots, stage
// logs, eval report, and a checksum manifest into output_dir.
RunArtifacts run_experiment(const RunConfig& config, RunMode mode);

// Recomputes the report from saved predictions.jsonl.
EvalReport run_evaluate(const std::string& predictions_path,
                        const std::string& test_annotations,
                        const std::vector<double>& grid);

// Renders predictions onto PPM copies: correct boxes (IoU > 0.3 against
// ground truth) in green, others in red, with per-image "pred=…, gt=…"
// sidecar text files.
void run_visualize(const std::string& model_path, const std::string& annotations_path,
                   double threshold, const std::string& out_dir);

PredictionsByImage load_predictions(const std::string& path);

uint64_t file_checksum(const std::string& path);

}  // namespace countgrid
