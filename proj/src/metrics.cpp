#include "geco/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "geco/common.hpp"

namespace geco {

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["mae"] = mae;
    j["rmse"] = rmse;
    j["ap"] = ap;
    j["ap50"] = ap50;
    return j.dump();
}

namespace metrics {

std::pair<double, double> count_errors(const std::vector<int>& predicted,
                                       const std::vector<int>& actual) {
    GECO_CHECK(predicted.size() == actual.size(), "count vectors must have equal length");
    if (predicted.empty()) throw EmptyDataset();
    double abs_sum = 0, sq_sum = 0;
    for (size_t i = 0; i < predicted.size(); ++i) {
        const double d = static_cast<double>(predicted[i]) - actual[i];
        abs_sum += std::fabs(d);
        sq_sum += d * d;
    }
    const double n = static_cast<double>(predicted.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

namespace {

struct FlatPred {
    int image = 0;
    int index = 0;  // position within its image's prediction list
    double score = 0;
    Box box;
};

double ap_at_threshold(const std::vector<FlatPred>& order,
                       const std::vector<std::vector<Box>>& gts, size_t total_gts,
                       double threshold) {
    std::vector<std::vector<char>> used(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);

    std::vector<double> precision, recall;
    precision.reserve(order.size());
    recall.reserve(order.size());
    size_t tp = 0, fp = 0;
    for (const FlatPred& p : order) {
        int best = -1;
        double best_iou = 0;
        const auto& img_gts = gts[p.image];
        for (size_t j = 0; j < img_gts.size(); ++j) {
            if (used[p.image][j]) continue;
            const double v = geometry::iou(p.box, img_gts[j]);
            if (v > best_iou) {
                best_iou = v;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0 && best_iou >= threshold) {
            used[p.image][best] = 1;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gts));
    }

    // Running maximum of precision from the high-recall end, then sample at
    // 101 evenly spaced recall levels.
    for (size_t i = precision.size(); i-- > 1;)
        precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double area = 0;
    size_t cursor = 0;
    for (int s = 0; s <= 100; ++s) {
        const double level = s / 100.0;
        while (cursor < recall.size() && recall[cursor] < level) ++cursor;
        if (cursor < precision.size()) area += precision[cursor];
    }
    return area / 101.0;
}

}  // namespace

double average_precision(const std::vector<std::vector<ScoredBox>>& predictions,
                         const std::vector<std::vector<Box>>& ground_truths,
                         const std::vector<double>& thresholds) {
    GECO_CHECK(predictions.size() == ground_truths.size(),
               "prediction and ground-truth image counts must match");
    GECO_CHECK(!thresholds.empty(), "need at least one IoU threshold");
    if (predictions.empty()) throw EmptyDataset();

    size_t total_gts = 0;
    for (const auto& g : ground_truths) total_gts += g.size();
    if (total_gts == 0) return 0.0;

    std::vector<FlatPred> order;
    for (size_t i = 0; i < predictions.size(); ++i)
        for (size_t k = 0; k < predictions[i].size(); ++k)
            order.push_back({static_cast<int>(i), static_cast<int>(k),
                             predictions[i][k].score, predictions[i][k].box});
    std::sort(order.begin(), order.end(), [](const FlatPred& a, const FlatPred& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    double sum = 0;
    for (const double t : thresholds)
        sum += ap_at_threshold(order, ground_truths, total_gts, t);
    return sum / static_cast<double>(thresholds.size());
}

EvalReport evaluate(const std::vector<std::vector<ScoredBox>>& predictions,
                    const std::vector<std::vector<Box>>& ground_truths) {
    GECO_CHECK(predictions.size() == ground_truths.size(),
               "prediction and ground-truth image counts must match");
    if (predictions.empty()) throw EmptyDataset();

    std::vector<int> pred_counts(predictions.size()), gt_counts(predictions.size());
    for (size_t i = 0; i < predictions.size(); ++i) {
        pred_counts[i] = static_cast<int>(predictions[i].size());
        gt_counts[i] = static_cast<int>(ground_truths[i].size());
    }
    EvalReport r;
    std::tie(r.mae, r.rmse) = count_errors(pred_counts, gt_counts);

    std::vector<double> coco;
    for (int k = 0; k <= 9; ++k) coco.push_back(0.50 + 0.05 * k);
    r.ap = average_precision(predictions, ground_truths, coco);
    r.ap50 = average_precision(predictions, ground_truths, {0.5});
    return r;
}

}  // namespace metrics
}  // namespace geco
