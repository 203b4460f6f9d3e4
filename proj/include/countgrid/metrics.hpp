#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "countgrid/dataset.hpp"
#include "countgrid/geometry.hpp"

namespace countgrid {

struct CountingRecord {
    long long predicted_count = 0;  // n_i
    long long true_count = 0;       // n_i'
};

struct EvalReport {
    double map_at_50 = 0.0;
    double mae = 0.0;
    double rmse = 0.0;
    double mae_threshold = 0.0;
    double rmse_threshold = 0.0;
    long long num_images = 0;

    std::string to_json() const;
};

struct PropagationQuality {
    int stage = 1;
    long long expanded = 0;
    long long correct = 0;
};

enum class CountObjective { Mae, Rmse };

using PredictionsByImage = std::map<std::string, std::vector<ScoredBox>>;
using BoxesByImage = std::map<std::string, std::vector<Box>>;

// PASCAL VOC 2007 11-point interpolated AP at the given IoU threshold.
// Predictions are pooled across images and sorted by score descending
// (ties by image key, then coordinates); each ground-truth box matches at
// most one prediction, greedily by highest IoU >= threshold.
// Throws DataError when there is no ground truth anywhere.
double average_precision(const PredictionsByImage& predictions,
                         const BoxesByImage& ground_truth, double iou_threshold);

// (mae, rmse) over per-image counting records. RMSE is the standard
// root-mean-square error. Throws DataError on empty input.
std::pair<double, double> counting_errors(const std::vector<CountingRecord>& records);

// For each grid threshold, counts predictions with score >= threshold per
// image and evaluates the objective; returns (best threshold, objective
// value), ties resolved toward the smallest threshold.
std::pair<double, double> select_counting_threshold(
    const PredictionsByImage& predictions, const std::map<std::string, long long>& true_counts,
    const std::vector<double>& grid, CountObjective objective);

// expanded = |labels|; correct = labels with IoU > iou_threshold against at
// least one ground-truth box (a ground-truth box may validate several labels).
PropagationQuality propagation_quality(const LabelSet& labels,
                                       const std::vector<Box>& full_ground_truth,
                                       double iou_threshold = 0.3);

// 0.05 to 0.70 inclusive, step 0.05.
std::vector<double> default_counting_grid();

}  // namespace countgrid
