#pragma once

#include <utility>
#include <vector>

#include "geco/geometry.hpp"
#include "geco/mat.hpp"

namespace geco::maxima {

struct LocalMax {
    int row = 0, col = 0;
    double score = 0;
};

/// All cells that are >= every 8-neighbor and strictly greater than every
/// neighbor at a lower raster index (so a flat plateau contributes exactly
/// one cell, the raster-first one). Sorted by score descending, raster
/// index ascending on ties.
std::vector<LocalMax> local_maxima_3x3(const Mat& map);

/// Keeps entries whose score strictly exceeds the median of the entries'
/// own scores (even count: mean of the middle two).
std::vector<LocalMax> filter_above_median(const std::vector<LocalMax>& maxima);

/// Inference-time extraction: cells below tau are zeroed and barred from
/// being maxima; surviving maxima are decoded through the tlrb field
/// (degenerate boxes dropped). y_bb is (H*W) x 4, raster-major.
std::vector<ScoredBox> extract_detections(const Mat& y_o, const Mat& y_bb, double tau,
                                          int image_h, int image_w);

}  // namespace geco::maxima
