#include "countgrid/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace countgrid {

bool Box::valid() const {
    return w > 0.0 && h > 0.0 && std::isfinite(x) && std::isfinite(y) &&
           std::isfinite(w) && std::isfinite(h);
}

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
    const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
    const double inter = ix * iy;
    if (inter <= 0.0) {
        return 0.0;
    }
    // areas from the same rounded spans as the intersection, so identical
    // boxes give exactly 1 and the ratio never exceeds 1
    const double area_a = (a.x2() - a.x) * (a.y2() - a.y);
    const double area_b = (b.x2() - b.x) * (b.y2() - b.y);
    return std::min(1.0, inter / (area_a + area_b - inter));
}

std::vector<ScoredBox> nms(std::vector<ScoredBox> candidates, double iou_threshold) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const ScoredBox& a, const ScoredBox& b) {
                         if (a.score != b.score) {
                             return a.score > b.score;
                         }
                         return std::tie(a.box.x, a.box.y, a.box.w, a.box.h) <
                                std::tie(b.box.x, b.box.y, b.box.w, b.box.h);
                     });

    std::vector<ScoredBox> kept;
    std::vector<char> suppressed(candidates.size(), 0);
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (suppressed[i]) {
            continue;
        }
        kept.push_back(candidates[i]);
        for (size_t j = i + 1; j < candidates.size(); ++j) {
            if (!suppressed[j] && iou(candidates[i].box, candidates[j].box) > iou_threshold) {
                suppressed[j] = 1;
            }
        }
    }
    return kept;
}

}  // namespace countgrid
