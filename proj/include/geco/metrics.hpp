#pragma once

#include <string>
#include <utility>
#include <vector>

#include "geco/geometry.hpp"

namespace geco {

struct EvalReport {
    double mae = 0;
    double rmse = 0;
    double ap = 0;
    double ap50 = 0;

    std::string to_json() const;
};

namespace metrics {

/// Mean absolute error and root mean squared error between per-image
/// predicted and ground-truth counts. Throws EmptyDataset on empty input.
std::pair<double, double> count_errors(const std::vector<int>& predicted,
                                       const std::vector<int>& actual);

/// Average precision over the given IoU thresholds, averaged COCO-style:
/// all predictions sorted by score descending (ties broken by image index,
/// then within-image index), each greedily matched to the unmatched
/// same-image gt of highest IoU when that IoU reaches the threshold;
/// precision-recall area via 101-point interpolation; mean over
/// thresholds. Zero total gts yields 0.
double average_precision(const std::vector<std::vector<ScoredBox>>& predictions,
                         const std::vector<std::vector<Box>>& ground_truths,
                         const std::vector<double>& thresholds);

/// Count metrics plus AP at thresholds 0.50:0.95 step 0.05 and AP at 0.5,
/// over one set of per-image detections.
EvalReport evaluate(const std::vector<std::vector<ScoredBox>>& predictions,
                    const std::vector<std::vector<Box>>& ground_truths);

}  // namespace metrics
}  // namespace geco
