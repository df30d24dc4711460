#pragma once

#include <optional>
#include <vector>

#include "geco/common.hpp"

namespace geco {

/// Axis-aligned box in continuous pixel coordinates, origin top-left,
/// y down. Invariant: x1 < x2, y1 < y2, all coordinates finite.
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return (x2 - x1) * (y2 - y1); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    bool valid() const;
    /// Throws ShapeError when the invariants do not hold.
    void check() const;
};

struct ScoredBox {
    Box box;
    double score = 0;
};

namespace geometry {

double iou(const Box& a, const Box& b);

/// Generalized IoU: iou minus (enclosure - union) / enclosure. In (-1, 1],
/// equal to 1 iff the boxes coincide.
double giou(const Box& a, const Box& b);

/// Decodes tlrb fractions at an output-grid cell into an image-space box.
/// The anchor is the cell center mapped through the stride-2 output grid
/// (row*2 + 0.5, col*2 + 0.5); top/bottom fractions scale by image height,
/// left/right by width; the result is clipped to the image. Returns nullopt
/// when clipping collapses a side to zero or below (degenerate box — the
/// caller drops the detection).
std::optional<Box> tlrb_to_box(int row, int col, double t, double l, double r, double b,
                               int image_h, int image_w);

/// Inverse of tlrb_to_box for boxes that needed no clipping: fractions of
/// the image dimensions from the cell anchor to each box edge.
void box_to_tlrb(const Box& box, int row, int col, int image_h, int image_w, double out[4]);

/// Greedy non-maxima suppression: process by descending score (ties: lower
/// input index first), keep a box iff its IoU with every already-kept box
/// is <= iou_threshold. Returns kept input indices in processing order.
std::vector<int> nms_boxes(const std::vector<ScoredBox>& dets, double iou_threshold);

}  // namespace geometry
}  // namespace geco
