#pragma once

#include <utility>
#include <vector>

#include "geco/geometry.hpp"
#include "geco/mat.hpp"

namespace geco {

struct Matching {
    std::vector<std::pair<int, int>> pairs;  // (row index, column index)
    double total_cost = 0;
};

enum class MaxLabel { TP, FP, FN };

/// One candidate location in the dense detection loss: a retained local
/// maximum (TP or FP, carrying a decoded box) or the cell of an unmatched
/// ground truth (FN, no box).
struct LabeledMax {
    int row = 0, col = 0;
    double score = 0;
    Box box;                // meaningful for TP/FP only
    MaxLabel label = MaxLabel::FP;
    int gt_index = -1;      // >= 0 for TP (matched gt) and FN (that gt)
};

struct CandidateMax {
    int row = 0, col = 0;
    double score = 0;
    Box box;
};

namespace assignment {

/// Minimum-cost bipartite matching of size min(m, n) over a dense cost
/// matrix, via the O(n^3) shortest-augmenting-path algorithm with
/// potentials. Among equal-cost optima any pairing may be returned.
Matching hungarian(const Mat& cost);

/// Labels candidate maxima against ground truths: Hungarian matching on
/// cost -giou(box, gt); matched candidates become TP, the rest FP; each
/// unmatched gt contributes an FN entry at its center's nearest output-grid
/// cell (clipped to the grid).
std::vector<LabeledMax> label_detections(const std::vector<CandidateMax>& maxima,
                                         const std::vector<Box>& gts, int grid_h, int grid_w);

}  // namespace assignment
}  // namespace geco
