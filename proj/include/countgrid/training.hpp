#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "countgrid/augment.hpp"
#include "countgrid/dataset.hpp"
#include "countgrid/detector.hpp"

namespace countgrid {

struct LossBreakdown {
    double objectiveness_positive = 0.0;  // sum (f - 1)^2 over positive cells
    double objectiveness_negative = 0.0;  // sum f^2 over active negative cells
    double coordinate = 0.0;              // sum squared regression residuals
    double total = 0.0;                   // pos + noobj_weight*neg + coord_weight*coord
};

struct TrainConfig {
    long long iterations = 1000;
    int batch_size = 64;
    int background_slots = 16;
    // gated=true: negative cells of target-domain images only contribute
    // while t <= gate_horizon; background-pool negatives are always active.
    bool gated = true;
    long long gate_horizon = 200;  // T
    std::vector<std::pair<long long, double>> lr_schedule = {{100, 0.0001},
                                                             {4900, 0.001},
                                                             {4000, 0.0001},
                                                             {1000, 0.00001}};
    double weight_decay = 0.0005;
    double noobj_weight = 0.5;
    double coord_weight = 5.0;
    uint64_t rng_seed = 0;
    int threads = 0;  // 0 = hardware concurrency
};

struct TrainStats {
    long long gate_skipped_cells = 0;  // negative cells zeroed by the gate
    double last_batch_loss = 0.0;
};

// Single-cell objectiveness term, unweighted. f_hat=1 -> (f-1)^2;
// f_hat=0 -> f^2 while active, 0 once the gate closes (target domain only).
double objectiveness_loss(double f, int f_hat, bool is_target_domain, long long t,
                          long long T);

LossBreakdown image_loss(const Image& pixels, const GridAssignment& assignment,
                         const GridModel& model, const TrainConfig& config,
                         bool is_target_domain, long long t);

// Analytic gradient of image_loss.total w.r.t. every weight, accumulated
// into grad (size = model.weights.size()). Returns the breakdown; counts
// gate-skipped negative cells into gate_skips when non-null.
LossBreakdown image_loss_gradient(const Image& pixels, const GridAssignment& assignment,
                                  const GridModel& model, const TrainConfig& config,
                                  bool is_target_domain, long long t,
                                  std::span<double> grad,
                                  long long* gate_skips = nullptr);

double schedule_lr(const std::vector<std::pair<long long, double>>& schedule, long long t);

// Mini-batch SGD with L2 weight decay. Each iteration draws
// batch_size - background_slots target images and background_slots pool
// images (both with replacement), augments them, and applies the summed
// batch gradient. Deterministic given config.rng_seed.
// Throws DivergenceError when the batch loss becomes non-finite.
GridModel train(const std::vector<std::pair<ImageRecord, LabelSet>>& train_set,
                const std::vector<ImageRecord>& background_pool, GridModel model,
                const TrainConfig& config, const AugmentConfig& augment_config,
                TrainStats* stats = nullptr);

}  // namespace countgrid
