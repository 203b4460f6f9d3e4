#pragma once

#include <vector>

namespace countgrid {

// Axis-aligned box, origin at top-left, y grows downward.
// Coordinates are continuous pixel units; w > 0 and h > 0.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double area() const { return w * h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    bool valid() const;
};

struct ScoredBox {
    Box box;
    double score = 0.0;  // in [0, 1]
};

// Intersection area over union area. Boxes touching only at an edge
// have intersection 0, hence IoU 0.
double iou(const Box& a, const Box& b);

// Greedy NMS: keep the highest-scored remaining box, drop every
// remaining box whose IoU with it exceeds iou_threshold. Score ties
// break lexicographically on (x, y, w, h) so the result is deterministic.
// Output is sorted by score descending.
std::vector<ScoredBox> nms(std::vector<ScoredBox> candidates, double iou_threshold);

}  // namespace countgrid
