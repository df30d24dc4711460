#include <algorithm>
#include <vector>

#include "doctest.h"
#include "geco/maxima.hpp"
#include "geco/rng.hpp"
#include "test_util.hpp"

using geco::Mat;
using geco::Rng;
using namespace geco::maxima;

namespace {

// Brute-force neighborhood scan implementing the documented rule directly:
// a cell survives iff it is >= every existing 8-neighbor and strictly
// greater than every neighbor with a lower raster index.
std::vector<LocalMax> reference_maxima(const Mat& map) {
    std::vector<LocalMax> out;
    const int h = map.rows(), w = map.cols();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double v = map(r, c);
            bool keep = true;
            for (int dr = -1; dr <= 1 && keep; ++dr) {
                for (int dc = -1; dc <= 1 && keep; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int nr = r + dr, nc = c + dc;
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    const double nv = map(nr, nc);
                    if (nv > v) keep = false;
                    if (nv == v && nr * w + nc < r * w + c) keep = false;
                }
            }
            if (keep) out.push_back({r, c, v});
        }
    }
    std::stable_sort(out.begin(), out.end(), [&](const LocalMax& a, const LocalMax& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.row * w + a.col < b.row * w + b.col;
    });
    return out;
}

Mat zeros_with(int h, int w, std::vector<std::tuple<int, int, double>> cells) {
    Mat m(h, w);
    for (auto [r, c, v] : cells) m(r, c) = v;
    return m;
}

std::vector<double> scores_of(const std::vector<LocalMax>& v) {
    std::vector<double> s;
    for (const auto& m : v) s.push_back(m.score);
    return s;
}

}  // namespace

TEST_SUITE("maxima") {

TEST_CASE("single interior peak") {
    // The zero background is a plateau; its raster-first cell (0,0) survives
    // alongside the real peak, which sorts first on score.
    const auto got = local_maxima_3x3(zeros_with(5, 5, {{2, 2, 1.0}}));
    REQUIRE(got.size() == 2);
    CHECK(got[0].row == 2);
    CHECK(got[0].col == 2);
    CHECK(got[0].score == 1.0);
    CHECK(got[1].row == 0);
    CHECK(got[1].col == 0);
    CHECK(got[1].score == 0.0);
}

TEST_CASE("constant map keeps exactly the raster-first cell") {
    const auto got = local_maxima_3x3(Mat::full(3, 3, 0.5));
    REQUIRE(got.size() == 1);
    CHECK(got[0].row == 0);
    CHECK(got[0].col == 0);
}

TEST_CASE("two peaks come back sorted by score") {
    const auto got = local_maxima_3x3(zeros_with(5, 5, {{4, 4, 0.8}, {0, 0, 0.9}}));
    REQUIRE(got.size() >= 2);
    CHECK(got[0].row == 0);
    CHECK(got[0].col == 0);
    CHECK(got[0].score == 0.9);
    CHECK(got[1].row == 4);
    CHECK(got[1].col == 4);
    CHECK(got[1].score == 0.8);
}

TEST_CASE("matches the brute-force scan on 1000 random maps") {
    Rng rng(41);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = rng.uniform_int(1, 32), w = rng.uniform_int(1, 32);
        Mat map(h, w);
        // coarse quantization forces plateaus and ties
        for (size_t i = 0; i < map.numel(); ++i) map[i] = rng.uniform_int(0, 9) / 10.0;
        const auto got = local_maxima_3x3(map);
        const auto want = reference_maxima(map);
        CAPTURE(trial);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].row == want[i].row);
            CHECK(got[i].col == want[i].col);
            CHECK(got[i].score == want[i].score);
        }
    }
}

TEST_CASE("median filter keeps strictly-above-median scores only") {
    auto make = [](std::vector<double> scores) {
        std::vector<LocalMax> v;
        for (size_t i = 0; i < scores.size(); ++i)
            v.push_back({0, static_cast<int>(i), scores[i]});
        return v;
    };
    // median of {0.1, 0.5, 0.9} is 0.5; only 0.9 is strictly above
    CHECK(scores_of(filter_above_median(make({0.9, 0.5, 0.1}))) == std::vector<double>{0.9});
    // constant scores: nothing strictly above
    CHECK(filter_above_median(make({0.7, 0.7, 0.7})).empty());
    // singleton: its own median
    CHECK(filter_above_median(make({0.3})).empty());
    // even count: median is the mean of the middle two (0.5 here)
    CHECK(scores_of(filter_above_median(make({0.8, 0.6, 0.4, 0.2}))) ==
          (std::vector<double>{0.8, 0.6}));
    // empty in, empty out
    CHECK(filter_above_median({}).empty());
}

TEST_CASE("median filter retains at most half the entries") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = rng.uniform_int(0, 20);
        std::vector<LocalMax> v;
        for (int i = 0; i < n; ++i) v.push_back({0, i, rng.uniform_int(0, 9) / 10.0});
        std::stable_sort(v.begin(), v.end(),
                         [](const LocalMax& a, const LocalMax& b) { return a.score > b.score; });
        const auto kept = filter_above_median(v);
        CAPTURE(trial);
        CHECK(kept.size() <= (v.size() + 1) / 2);
        if (!v.empty()) {
            std::vector<double> s = scores_of(v);
            std::sort(s.begin(), s.end());
            const double med = v.size() % 2 ? s[v.size() / 2]
                                            : 0.5 * (s[v.size() / 2 - 1] + s[v.size() / 2]);
            for (const auto& k : kept) CHECK(k.score > med);
        }
    }
}

TEST_CASE("extract_detections thresholds before the maxima search") {
    // all-zero map: nothing above any positive threshold
    CHECK(extract_detections(Mat(5, 5), Mat(25, 4), 0.5, 10, 10).empty());

    // single strong cell survives and decodes through its tlrb row
    Mat y_o = zeros_with(5, 5, {{2, 2, 0.9}});
    Mat y_bb(25, 4);
    double* row = y_bb.row(2 * 5 + 2);
    row[0] = row[1] = row[2] = row[3] = 0.2;
    auto got = extract_detections(y_o, y_bb, 0.5, 10, 10);
    REQUIRE(got.size() == 1);
    CHECK(got[0].score == 0.9);
    // anchor (4.5, 4.5), fractions 0.2 of a 10 px image
    CHECK(got[0].box.x1 == doctest::Approx(2.5));
    CHECK(got[0].box.y2 == doctest::Approx(6.5));

    // a sub-threshold cell is excluded even where it is the local peak
    Mat low = zeros_with(5, 5, {{2, 2, 0.3}, {0, 0, 0.9}});
    auto kept = extract_detections(low, y_bb, 0.5, 10, 10);
    for (const auto& d : kept) CHECK(d.score >= 0.5);

    // threshold above the whole range: empty
    Mat anyv(4, 4);
    for (size_t i = 0; i < anyv.numel(); ++i) anyv[i] = 0.5;
    CHECK(extract_detections(anyv, Mat(16, 4), 1.0 + 1e-9, 8, 8).empty());
}

TEST_CASE("extract_detections drops degenerate decodes") {
    // zero tlrb everywhere: every decoded box collapses to the anchor point
    Mat y_o = zeros_with(5, 5, {{2, 2, 0.9}});
    CHECK(extract_detections(y_o, Mat(25, 4), 0.5, 10, 10).empty());
}

TEST_CASE("thresholding erases sub-tau cells without disturbing surviving peaks") {
    // 0.45 sits next to 0.6; with tau=0.5 the 0.45 is zeroed and excluded,
    // and 0.6 stays the only survivor
    Mat y_o = zeros_with(3, 3, {{1, 1, 0.6}, {1, 2, 0.45}});
    Mat y_bb(9, 4);
    for (int i = 0; i < 9; ++i) {
        double* r = y_bb.row(i);
        r[0] = r[1] = r[2] = r[3] = 0.3;
    }
    auto got = extract_detections(y_o, y_bb, 0.5, 6, 6);
    REQUIRE(got.size() == 1);
    CHECK(got[0].score == 0.6);
}

}  // TEST_SUITE
