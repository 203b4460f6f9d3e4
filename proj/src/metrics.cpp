#include "countgrid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <json.hpp>

#include "countgrid/errors.hpp"

namespace countgrid {

std::string EvalReport::to_json() const {
    nlohmann::json j{{"map_at_50", map_at_50},
                     {"mae", mae},
                     {"rmse", rmse},
                     {"mae_threshold", mae_threshold},
                     {"rmse_threshold", rmse_threshold},
                     {"num_images", num_images}};
    return j.dump(2);
}

namespace {

struct PooledPrediction {
    std::string image_id;
    ScoredBox sb;
};

// Mean over recall levels {0, 0.1, ..., 1.0} of the max precision with
// recall >= level.
double eleven_point_ap(const std::vector<double>& recalls,
                       const std::vector<double>& precisions) {
    double sum = 0.0;
    for (int level = 0; level <= 10; ++level) {
        const double r = level / 10.0;
        double best = 0.0;
        for (size_t i = 0; i < recalls.size(); ++i) {
            if (recalls[i] >= r - 1e-12) {
                best = std::max(best, precisions[i]);
            }
        }
        sum += best;
    }
    return sum / 11.0;
}

}  // namespace

double average_precision(const PredictionsByImage& predictions,
                         const BoxesByImage& ground_truth, double iou_threshold) {
    long long total_gt = 0;
    for (const auto& [id, boxes] : ground_truth) {
        total_gt += static_cast<long long>(boxes.size());
    }
    if (total_gt == 0) {
        throw DataError("average_precision: no ground-truth boxes anywhere");
    }
    for (const auto& [id, preds] : predictions) {
        if (!ground_truth.count(id)) {
            throw DataError("average_precision: predictions for unknown image " + id);
        }
    }

    std::vector<PooledPrediction> pool;
    for (const auto& [id, preds] : predictions) {
        for (const auto& sb : preds) {
            pool.push_back({id, sb});
        }
    }
    if (pool.empty()) {
        return 0.0;
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const PooledPrediction& a, const PooledPrediction& b) {
                         if (a.sb.score != b.sb.score) {
                             return a.sb.score > b.sb.score;
                         }
                         if (a.image_id != b.image_id) {
                             return a.image_id < b.image_id;
                         }
                         return std::tie(a.sb.box.x, a.sb.box.y, a.sb.box.w, a.sb.box.h) <
                                std::tie(b.sb.box.x, b.sb.box.y, b.sb.box.w, b.sb.box.h);
                     });

    std::map<std::string, std::vector<char>> gt_used;
    for (const auto& [id, boxes] : ground_truth) {
        gt_used[id].assign(boxes.size(), 0);
    }

    std::vector<double> recalls, precisions;
    long long tp = 0, fp = 0;
    for (const auto& p : pool) {
        const auto& gts = ground_truth.at(p.image_id);
        auto& used = gt_used[p.image_id];
        int best_idx = -1;
        double best_iou = 0.0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) {
                continue;
            }
            const double v = iou(p.sb.box, gts[g]);
            // ties break by ground-truth list order (strictly-greater keeps
            // the earlier candidate)
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best_idx = static_cast<int>(g);
            }
        }
        if (best_idx >= 0) {
            used[best_idx] = 1;
            ++tp;
        } else {
            ++fp;
        }
        recalls.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
        precisions.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }
    return eleven_point_ap(recalls, precisions);
}

std::pair<double, double> counting_errors(const std::vector<CountingRecord>& records) {
    if (records.empty()) {
        throw DataError("counting_errors: empty record list");
    }
    double abs_sum = 0.0, sq_sum = 0.0;
    for (const auto& r : records) {
        const double d = static_cast<double>(r.predicted_count - r.true_count);
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    const double n = static_cast<double>(records.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

std::pair<double, double> select_counting_threshold(
    const PredictionsByImage& predictions, const std::map<std::string, long long>& true_counts,
    const std::vector<double>& grid, CountObjective objective) {
    if (grid.empty()) {
        throw ConfigError("select_counting_threshold: empty grid");
    }
    for (size_t i = 1; i < grid.size(); ++i) {
        if (grid[i] <= grid[i - 1]) {
            throw ConfigError("select_counting_threshold: grid must be strictly increasing");
        }
    }
    double best_threshold = grid.front();
    double best_value = 0.0;
    bool first = true;
    for (double threshold : grid) {
        std::vector<CountingRecord> records;
        for (const auto& [id, truth] : true_counts) {
            long long count = 0;
            auto it = predictions.find(id);
            if (it != predictions.end()) {
                for (const auto& sb : it->second) {
                    if (sb.score >= threshold) {
                        ++count;
                    }
                }
            }
            records.push_back({count, truth});
        }
        const auto [mae, rmse] = counting_errors(records);
        const double value = objective == CountObjective::Mae ? mae : rmse;
        if (first || value < best_value) {
            best_value = value;
            best_threshold = threshold;
            first = false;
        }
    }
    return {best_threshold, best_value};
}

PropagationQuality propagation_quality(const LabelSet& labels,
                                       const std::vector<Box>& full_ground_truth,
                                       double iou_threshold) {
    PropagationQuality q;
    q.stage = labels.stage;
    q.expanded = static_cast<long long>(labels.boxes.size());
    for (const auto& lb : labels.boxes) {
        for (const auto& gt : full_ground_truth) {
            if (iou(lb.box, gt) > iou_threshold) {
                ++q.correct;
                break;
            }
        }
    }
    return q;
}

std::vector<double> default_counting_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 14; ++i) {
        grid.push_back(i * 0.05);
    }
    return grid;
}

}  // namespace countgrid
