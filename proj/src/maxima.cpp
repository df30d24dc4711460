#include "geco/maxima.hpp"

#include <algorithm>

namespace geco::maxima {

std::vector<LocalMax> local_maxima_3x3(const Mat& map) {
    const int h = static_cast<int>(map.rows());
    const int w = static_cast<int>(map.cols());
    std::vector<LocalMax> out;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double x = map(i, j);
            const long idx = static_cast<long>(i) * w + j;
            bool is_max = true;
            for (int di = -1; di <= 1 && is_max; ++di) {
                for (int dj = -1; dj <= 1 && is_max; ++dj) {
                    if (di == 0 && dj == 0) continue;
                    const int ni = i + di, nj = j + dj;
                    if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                    const double y = map(ni, nj);
                    if (y > x) is_max = false;
                    // Plateau tie: the earlier raster cell wins.
                    else if (y == x && static_cast<long>(ni) * w + nj < idx)
                        is_max = false;
                }
            }
            if (is_max) out.push_back({i, j, x});
        }
    }
    std::stable_sort(out.begin(), out.end(), [w](const LocalMax& a, const LocalMax& b) {
        if (a.score != b.score) return a.score > b.score;
        return static_cast<long>(a.row) * w + a.col < static_cast<long>(b.row) * w + b.col;
    });
    return out;
}

std::vector<LocalMax> filter_above_median(const std::vector<LocalMax>& maxima) {
    if (maxima.empty()) return {};
    std::vector<double> scores;
    scores.reserve(maxima.size());
    for (const auto& m : maxima) scores.push_back(m.score);
    std::sort(scores.begin(), scores.end());
    const size_t n = scores.size();
    const double median =
        n % 2 == 1 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
    std::vector<LocalMax> out;
    for (const auto& m : maxima)
        if (m.score > median) out.push_back(m);
    return out;
}

std::vector<ScoredBox> extract_detections(const Mat& y_o, const Mat& y_bb, double tau,
                                          int image_h, int image_w) {
    const int h = static_cast<int>(y_o.rows());
    const int w = static_cast<int>(y_o.cols());
    GECO_CHECK(y_bb.rows() == static_cast<size_t>(h) * w && y_bb.cols() == 4,
               "box field must be (H*W) x 4 aligned with the objectness map");

    Mat gated(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) gated(i, j) = y_o(i, j) < tau ? 0.0 : y_o(i, j);

    std::vector<ScoredBox> out;
    for (const LocalMax& m : local_maxima_3x3(gated)) {
        if (y_o(m.row, m.col) < tau) continue;  // zeroed cells are not candidates
        const size_t cell = static_cast<size_t>(m.row) * w + m.col;
        const auto box = geometry::tlrb_to_box(m.row, m.col, y_bb(cell, 0), y_bb(cell, 1),
                                               y_bb(cell, 2), y_bb(cell, 3), image_h, image_w);
        if (!box) continue;
        out.push_back({*box, y_o(m.row, m.col)});
    }
    return out;
}

}  // namespace geco::maxima
