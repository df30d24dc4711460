#include "geco/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace geco::assignment {

namespace {

// Shortest-augmenting-path Hungarian on a rows <= cols matrix. Classic
// potentials formulation with 1-based dummy row/column 0; exact on doubles
// (only additions and comparisons of input entries).
std::vector<int> solve_rows_le_cols(const Mat& cost) {
    const int m = static_cast<int>(cost.rows());
    const int n = static_cast<int>(cost.cols());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0);  // match[j] = row assigned to column j
    std::vector<int> way(n + 1, 0);

    for (int i = 1; i <= m; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            const int i0 = match[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const int j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> row_to_col(m, -1);
    for (int j = 1; j <= n; ++j)
        if (match[j] != 0) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

Matching hungarian(const Mat& cost) {
    Matching result;
    const int m = static_cast<int>(cost.rows());
    const int n = static_cast<int>(cost.cols());
    if (m == 0 || n == 0) return result;

    if (m <= n) {
        const std::vector<int> row_to_col = solve_rows_le_cols(cost);
        for (int i = 0; i < m; ++i)
            if (row_to_col[i] >= 0) result.pairs.emplace_back(i, row_to_col[i]);
    } else {
        Mat t(n, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) t(j, i) = cost(i, j);
        const std::vector<int> col_to_row = solve_rows_le_cols(t);
        for (int j = 0; j < n; ++j)
            if (col_to_row[j] >= 0) result.pairs.emplace_back(col_to_row[j], j);
        std::sort(result.pairs.begin(), result.pairs.end());
    }
    for (const auto& [i, j] : result.pairs) result.total_cost += cost(i, j);
    return result;
}

std::vector<LabeledMax> label_detections(const std::vector<CandidateMax>& maxima,
                                         const std::vector<Box>& gts, int grid_h, int grid_w) {
    const int m = static_cast<int>(maxima.size());
    const int n = static_cast<int>(gts.size());

    std::vector<int> max_to_gt(m, -1);
    std::vector<char> gt_matched(n, false);
    if (m > 0 && n > 0) {
        Mat cost(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) cost(i, j) = -geometry::giou(maxima[i].box, gts[j]);
        const Matching match = hungarian(cost);
        for (const auto& [i, j] : match.pairs) {
            max_to_gt[i] = j;
            gt_matched[j] = true;
        }
    }

    std::vector<LabeledMax> out;
    out.reserve(m + n);
    for (int i = 0; i < m; ++i) {
        LabeledMax e;
        e.row = maxima[i].row;
        e.col = maxima[i].col;
        e.score = maxima[i].score;
        e.box = maxima[i].box;
        e.label = max_to_gt[i] >= 0 ? MaxLabel::TP : MaxLabel::FP;
        e.gt_index = max_to_gt[i];
        out.push_back(e);
    }
    for (int j = 0; j < n; ++j) {
        if (gt_matched[j]) continue;
        // The unmatched gt's center, mapped to the nearest output cell:
        // cell anchors sit at pixel (2*idx + 0.5).
        LabeledMax e;
        e.row = std::clamp(static_cast<int>(std::lround((gts[j].cy() - 0.5) / 2.0)), 0,
                           grid_h - 1);
        e.col = std::clamp(static_cast<int>(std::lround((gts[j].cx() - 0.5) / 2.0)), 0,
                           grid_w - 1);
        e.label = MaxLabel::FN;
        e.gt_index = j;
        out.push_back(e);
    }
    return out;
}

}  // namespace geco::assignment
