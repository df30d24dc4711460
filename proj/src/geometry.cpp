#include "geco/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geco {

bool Box::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 < x2 && y1 < y2;
}

void Box::check() const {
    if (!valid()) throw ShapeError("invalid box: requires finite coords with x1<x2, y1<y2");
}

namespace geometry {

namespace {

double intersection_area(const Box& a, const Box& b) {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

}  // namespace

double iou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

double giou(const Box& a, const Box& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    const double ew = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    const double eh = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    const double enclosure = ew * eh;
    return inter / uni - (enclosure - uni) / enclosure;
}

std::optional<Box> tlrb_to_box(int row, int col, double t, double l, double r, double b,
                               int image_h, int image_w) {
    const double ay = row * 2.0 + 0.5;
    const double ax = col * 2.0 + 0.5;
    Box box;
    box.x1 = std::max(0.0, ax - l * image_w);
    box.y1 = std::max(0.0, ay - t * image_h);
    box.x2 = std::min(static_cast<double>(image_w), ax + r * image_w);
    box.y2 = std::min(static_cast<double>(image_h), ay + b * image_h);
    if (box.x2 - box.x1 <= 0.0 || box.y2 - box.y1 <= 0.0) return std::nullopt;
    return box;
}

void box_to_tlrb(const Box& box, int row, int col, int image_h, int image_w, double out[4]) {
    const double ay = row * 2.0 + 0.5;
    const double ax = col * 2.0 + 0.5;
    out[0] = (ay - box.y1) / image_h;
    out[1] = (ax - box.x1) / image_w;
    out[2] = (box.x2 - ax) / image_w;
    out[3] = (box.y2 - ay) / image_h;
}

std::vector<int> nms_boxes(const std::vector<ScoredBox>& dets, double iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });
    std::vector<int> kept;
    for (int idx : order) {
        bool suppressed = false;
        for (int kept_idx : kept) {
            if (iou(dets[idx].box, dets[kept_idx].box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

}  // namespace geometry
}  // namespace geco
