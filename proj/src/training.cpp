#include "countgrid/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "countgrid/errors.hpp"

namespace countgrid {

double objectiveness_loss(double f, int f_hat, bool is_target_domain, long long t,
                          long long T) {
    if (f_hat == 1) {
        return (f - 1.0) * (f - 1.0);
    }
    if (is_target_domain && t > T) {
        return 0.0;
    }
    return f * f;
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

void axpy(double a, std::span<const double> x, std::span<double> y) {
    for (size_t i = 0; i < x.size(); ++i) {
        y[i] += a * x[i];
    }
}

struct CellPass {
    const GridModel& model;
    const TrainConfig& config;
    bool is_target_domain;
    long long t;
    bool want_grad;
    std::span<double> grad;
    LossBreakdown breakdown;
    long long gate_skips = 0;

    void cell(const std::vector<double>& feat, int8_t positive,
              const std::array<double, 4>& targets) {
        const bool gate_closed =
            config.gated && is_target_domain && t > config.gate_horizon;
        const double z = dot(model.head(kObjectiveness), feat);
        const double f = sigmoid(z);
        if (positive) {
            breakdown.objectiveness_positive += (f - 1.0) * (f - 1.0);
            if (want_grad) {
                const double dz = 2.0 * (f - 1.0) * f * (1.0 - f);
                axpy(dz, feat,
                     grad.subspan(static_cast<size_t>(kObjectiveness) * feat.size(),
                                  feat.size()));
            }
            for (int head = kOffsetX; head <= kSizeH; ++head) {
                const double zr = dot(model.head(head), feat);
                const double residual = zr - targets[head - kOffsetX];
                breakdown.coordinate += residual * residual;
                if (want_grad) {
                    axpy(2.0 * config.coord_weight * residual, feat,
                         grad.subspan(static_cast<size_t>(head) * feat.size(), feat.size()));
                }
            }
        } else if (gate_closed) {
            ++gate_skips;
        } else {
            breakdown.objectiveness_negative += f * f;
            if (want_grad) {
                const double dz = config.noobj_weight * 2.0 * f * f * (1.0 - f);
                axpy(dz, feat,
                     grad.subspan(static_cast<size_t>(kObjectiveness) * feat.size(),
                                  feat.size()));
            }
        }
    }

    void finish() {
        breakdown.total = breakdown.objectiveness_positive +
                          config.noobj_weight * breakdown.objectiveness_negative +
                          config.coord_weight * breakdown.coordinate;
    }
};

LossBreakdown run_pass(const Image& pixels, const GridAssignment& assignment,
                       const GridModel& model, const TrainConfig& config,
                       bool is_target_domain, long long t, bool want_grad,
                       std::span<double> grad, long long* gate_skips) {
    CellPass pass{model, config, is_target_domain, t, want_grad, grad, {}, 0};
    std::vector<double> feat(model.feature_dim());
    for (int gy = 0; gy < assignment.grid_h; ++gy) {
        for (int gx = 0; gx < assignment.grid_w; ++gx) {
            const size_t i = static_cast<size_t>(gy) * assignment.grid_w + gx;
            extract_patch(pixels, gx, gy, model, feat);
            pass.cell(feat, assignment.positive[i], assignment.targets[i]);
        }
    }
    pass.finish();
    if (gate_skips) {
        *gate_skips += pass.gate_skips;
    }
    return pass.breakdown;
}

}  // namespace

LossBreakdown image_loss(const Image& pixels, const GridAssignment& assignment,
                         const GridModel& model, const TrainConfig& config,
                         bool is_target_domain, long long t) {
    return run_pass(pixels, assignment, model, config, is_target_domain, t, false, {},
                    nullptr);
}

LossBreakdown image_loss_gradient(const Image& pixels, const GridAssignment& assignment,
                                  const GridModel& model, const TrainConfig& config,
                                  bool is_target_domain, long long t,
                                  std::span<double> grad, long long* gate_skips) {
    return run_pass(pixels, assignment, model, config, is_target_domain, t, true, grad,
                    gate_skips);
}

double schedule_lr(const std::vector<std::pair<long long, double>>& schedule, long long t) {
    long long upto = 0;
    double lr = schedule.empty() ? 0.0 : schedule.back().second;
    for (const auto& [span, rate] : schedule) {
        upto += span;
        if (t <= upto) {
            lr = rate;
            break;
        }
    }
    return lr;
}

GridModel train(const std::vector<std::pair<ImageRecord, LabelSet>>& train_set,
                const std::vector<ImageRecord>& background_pool, GridModel model,
                const TrainConfig& config, const AugmentConfig& augment_config,
                TrainStats* stats) {
    if (train_set.empty()) {
        throw DataError("train: empty training set");
    }
    const int bg_slots = background_pool.empty() ? 0 : config.background_slots;
    const int target_slots = config.batch_size - bg_slots;
    if (target_slots <= 0) {
        throw ConfigError("train: background_slots must leave room for target images");
    }

    struct BatchItem {
        int record_index = 0;  // into train_set or background_pool
        bool is_background = false;
        uint64_t augment_seed = 0;
    };

    const size_t n_weights = model.weights.size();
    std::mt19937_64 rng(config.rng_seed);
    std::uniform_int_distribution<int> pick_target(0, static_cast<int>(train_set.size()) - 1);
    std::uniform_int_distribution<int> pick_background(
        0, std::max(0, static_cast<int>(background_pool.size()) - 1));

    int n_threads = config.threads > 0
                        ? config.threads
                        : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<int>(n_threads, config.batch_size);

    std::vector<BatchItem> batch(static_cast<size_t>(target_slots + bg_slots));
    // per-item buffers reduced in item order keep the result independent of
    // the thread count
    std::vector<std::vector<double>> item_grads(batch.size(),
                                                std::vector<double>(n_weights, 0.0));
    std::vector<LossBreakdown> item_losses(batch.size());
    std::vector<long long> item_gate_skips(batch.size(), 0);

    TrainStats local_stats;
    for (long long t = 1; t <= config.iterations; ++t) {
        const double lr = schedule_lr(config.lr_schedule, t);
        for (int i = 0; i < target_slots; ++i) {
            batch[i] = {pick_target(rng), false, rng()};
        }
        for (int i = 0; i < bg_slots; ++i) {
            batch[target_slots + i] = {pick_background(rng), true, rng()};
        }

        auto worker = [&](int tid) {
            const size_t per = (batch.size() + n_threads - 1) / n_threads;
            const size_t begin = tid * per;
            const size_t end = std::min(batch.size(), begin + per);
            for (size_t i = begin; i < end; ++i) {
                const BatchItem& item = batch[i];
                auto& grad = item_grads[i];
                std::fill(grad.begin(), grad.end(), 0.0);
                item_gate_skips[i] = 0;
                const ImageRecord& rec = item.is_background
                                             ? background_pool[item.record_index]
                                             : train_set[item.record_index].first;
                const std::vector<LabeledBox> labels =
                    item.is_background ? std::vector<LabeledBox>{}
                                       : train_set[item.record_index].second.boxes;
                std::mt19937_64 aug_rng(item.augment_seed);
                AugmentedSample sample = augment(rec.pixels, labels, augment_config, aug_rng);
                const GridAssignment assignment = assign_targets(
                    sample.boxes, sample.pixels.width, sample.pixels.height, model);
                item_losses[i] = image_loss_gradient(sample.pixels, assignment, model,
                                                     config, !item.is_background, t, grad,
                                                     &item_gate_skips[i]);
            }
        };

        if (n_threads == 1) {
            worker(0);
        } else {
            std::vector<std::thread> threads;
            threads.reserve(n_threads);
            for (int tid = 0; tid < n_threads; ++tid) {
                threads.emplace_back(worker, tid);
            }
            for (auto& th : threads) {
                th.join();
            }
        }

        double batch_loss = 0.0;
        for (size_t i = 0; i < batch.size(); ++i) {
            batch_loss += item_losses[i].total;
            local_stats.gate_skipped_cells += item_gate_skips[i];
        }
        if (!std::isfinite(batch_loss)) {
            throw DivergenceError("training diverged (non-finite loss) at iteration " +
                                  std::to_string(t));
        }
        local_stats.last_batch_loss = batch_loss;

        for (size_t w = 0; w < n_weights; ++w) {
            double g = 0.0;
            for (size_t i = 0; i < batch.size(); ++i) {
                g += item_grads[i][w];
            }
            model.weights[w] -= lr * (g + config.weight_decay * model.weights[w]);
        }
    }
    if (stats) {
        *stats = local_stats;
    }
    return model;
}

}  // namespace countgrid
