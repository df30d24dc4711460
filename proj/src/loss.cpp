#include "geco/loss.hpp"

#include <algorithm>
#include <cmath>

namespace geco::loss {

using ad::Var;

Box decode_unclipped(int row, int col, const double* tlrb, int image_h, int image_w) {
    const double ay = row * 2 + 0.5;
    const double ax = col * 2 + 0.5;
    Box b;
    b.y1 = ay - tlrb[0] * image_h;
    b.x1 = ax - tlrb[1] * image_w;
    b.x2 = ax + tlrb[2] * image_w;
    b.y2 = ay + tlrb[3] * image_h;
    return b;
}

std::vector<maxima::LocalMax> surviving_maxima(const Mat& y_o_grid) {
    return maxima::filter_above_median(maxima::local_maxima_3x3(y_o_grid));
}

namespace {

Mat grid_view(const Mat& y_o_column, int grid_h, int grid_w) {
    GECO_CHECK(y_o_column.numel() == static_cast<size_t>(grid_h) * grid_w,
               "objectness size does not match the grid");
    Mat g(grid_h, grid_w);
    std::copy(y_o_column.data(), y_o_column.data() + y_o_column.numel(), g.data());
    return g;
}

int center_cell_row(const Box& gt, int grid_h) {
    return std::clamp(static_cast<int>(std::lround((gt.cy() - 0.5) / 2.0)), 0, grid_h - 1);
}

int center_cell_col(const Box& gt, int grid_w) {
    return std::clamp(static_cast<int>(std::lround((gt.cx() - 0.5) / 2.0)), 0, grid_w - 1);
}

/// Sum of gIoU(decoded box, gt) over aligned rows, as a graph. tlrb_rows is
/// k x 4; cells/gts give the anchors and the targets. Denominators stay
/// positive because each gt has positive area.
Var giou_sum_graph(const Var& tlrb_rows, const std::vector<std::pair<int, int>>& cells,
                   const std::vector<Box>& gts, int image_h, int image_w) {
    const int k = static_cast<int>(cells.size());
    Mat axm(k, 1), aym(k, 1), gx1(k, 1), gy1(k, 1), gx2(k, 1), gy2(k, 1), garea(k, 1);
    for (int i = 0; i < k; ++i) {
        aym(i, 0) = cells[i].first * 2 + 0.5;
        axm(i, 0) = cells[i].second * 2 + 0.5;
        gx1(i, 0) = gts[i].x1;
        gy1(i, 0) = gts[i].y1;
        gx2(i, 0) = gts[i].x2;
        gy2(i, 0) = gts[i].y2;
        garea(i, 0) = gts[i].area();
    }
    Var ax = ad::constant(std::move(axm)), ay = ad::constant(std::move(aym));
    Var gx1c = ad::constant(std::move(gx1)), gy1c = ad::constant(std::move(gy1));
    Var gx2c = ad::constant(std::move(gx2)), gy2c = ad::constant(std::move(gy2));
    Var ga = ad::constant(std::move(garea));

    Var t = ad::slice_cols(tlrb_rows, 0, 1);
    Var l = ad::slice_cols(tlrb_rows, 1, 2);
    Var r = ad::slice_cols(tlrb_rows, 2, 3);
    Var b = ad::slice_cols(tlrb_rows, 3, 4);
    Var px1 = ad::sub(ax, ad::scale(l, image_w));
    Var py1 = ad::sub(ay, ad::scale(t, image_h));
    Var px2 = ad::add(ax, ad::scale(r, image_w));
    Var py2 = ad::add(ay, ad::scale(b, image_h));

    Var iw = ad::maximum_const(ad::sub(ad::minimum(px2, gx2c), ad::maximum(px1, gx1c)), 0.0);
    Var ih = ad::maximum_const(ad::sub(ad::minimum(py2, gy2c), ad::maximum(py1, gy1c)), 0.0);
    Var inter = ad::mul(iw, ih);
    Var parea = ad::mul(ad::sub(px2, px1), ad::sub(py2, py1));
    Var uni = ad::sub(ad::add(parea, ga), inter);
    Var ew = ad::sub(ad::maximum(px2, gx2c), ad::minimum(px1, gx1c));
    Var eh = ad::sub(ad::maximum(py2, gy2c), ad::minimum(py1, gy1c));
    Var enc = ad::mul(ew, eh);
    Var giou = ad::sub(ad::div(inter, uni), ad::div(ad::sub(enc, uni), enc));
    return ad::sum_all(giou);
}

std::vector<LabeledMax> label_from_maxima(const std::vector<maxima::LocalMax>& kept,
                                          const Mat& tlrb_rows_by_candidate,
                                          const std::vector<Box>& gts, int grid_h, int grid_w,
                                          int image_h, int image_w) {
    std::vector<CandidateMax> cands;
    cands.reserve(kept.size());
    for (size_t i = 0; i < kept.size(); ++i) {
        CandidateMax c;
        c.row = kept[i].row;
        c.col = kept[i].col;
        c.score = kept[i].score;
        c.box = decode_unclipped(c.row, c.col, tlrb_rows_by_candidate.row(static_cast<int>(i)),
                                 image_h, image_w);
        cands.push_back(c);
    }
    return assignment::label_detections(cands, gts, grid_h, grid_w);
}

}  // namespace

LossBreakdown dense_detection_loss(const DetectionField& field, const std::vector<Box>& gts,
                                   int image_h, int image_w) {
    const auto kept = surviving_maxima(field.y_o);
    Mat cand_tlrb(static_cast<int>(kept.size()), 4);
    for (size_t i = 0; i < kept.size(); ++i) {
        const double* src = field.y_bb.row(kept[i].row * field.grid_w + kept[i].col);
        std::copy(src, src + 4, cand_tlrb.row(static_cast<int>(i)));
    }
    const auto labeled = label_from_maxima(kept, cand_tlrb, gts, field.grid_h, field.grid_w,
                                           image_h, image_w);

    LossBreakdown out;
    for (const auto& lm : labeled) {
        const double y = field.y_o(lm.row, lm.col);
        switch (lm.label) {
            case MaxLabel::TP:
                out.giou_term -= geometry::giou(lm.box, gts[lm.gt_index]);
                out.tp_fn_objectness_term += (y - 1.0) * (y - 1.0);
                ++out.tp;
                break;
            case MaxLabel::FN:
                out.tp_fn_objectness_term += (y - 1.0) * (y - 1.0);
                ++out.fn;
                break;
            case MaxLabel::FP:
                out.fp_objectness_term += y * y;
                ++out.fp;
                break;
        }
    }
    out.total = out.giou_term + out.tp_fn_objectness_term + out.fp_objectness_term;
    return out;
}

LossBreakdown dense_detection_loss_graph(Model& model, const ForwardResult& fwd,
                                         const std::vector<Box>& gts, int image_h,
                                         int image_w) {
    std::vector<maxima::LocalMax> kept;
    {
        ad::NoGradGuard ng;
        kept = surviving_maxima(grid_view(fwd.y_o.value(), fwd.grid_h, fwd.grid_w));
    }

    std::vector<int> cand_cells(kept.size());
    for (size_t i = 0; i < kept.size(); ++i)
        cand_cells[i] = kept[i].row * fwd.grid_w + kept[i].col;

    Var cand_tlrb;  // candidate boxes via the box head on the gathered rows
    if (!kept.empty())
        cand_tlrb = model.box_head_rows(ad::gather_rows(fwd.q_hr, cand_cells));

    std::vector<LabeledMax> labeled;
    {
        ad::NoGradGuard ng;
        labeled = label_from_maxima(kept, kept.empty() ? Mat(0, 4) : cand_tlrb.value(), gts,
                                    fwd.grid_h, fwd.grid_w, image_h, image_w);
    }

    // Positions of the TP entries within the candidate list, aligned gts,
    // and the objectness cells per label class.
    std::vector<int> tp_in_cand;
    std::vector<std::pair<int, int>> tp_cells;
    std::vector<Box> tp_gts;
    std::vector<int> tp_fn_cells, fp_cells;
    {
        // labeled holds TP/FP entries in candidate order first, then FNs.
        size_t cand_i = 0;
        for (const auto& lm : labeled) {
            const int cell = lm.row * fwd.grid_w + lm.col;
            switch (lm.label) {
                case MaxLabel::TP:
                    tp_in_cand.push_back(static_cast<int>(cand_i++));
                    tp_cells.emplace_back(lm.row, lm.col);
                    tp_gts.push_back(gts[lm.gt_index]);
                    tp_fn_cells.push_back(cell);
                    break;
                case MaxLabel::FP:
                    ++cand_i;
                    fp_cells.push_back(cell);
                    break;
                case MaxLabel::FN:
                    tp_fn_cells.push_back(cell);
                    break;
            }
        }
    }

    LossBreakdown out;
    out.tp = static_cast<int>(tp_in_cand.size());
    out.fp = static_cast<int>(fp_cells.size());
    out.fn = static_cast<int>(tp_fn_cells.size()) - out.tp;

    Var total = ad::constant(Mat(1, 1));
    if (!tp_in_cand.empty()) {
        Var tp_rows = ad::gather_rows(cand_tlrb, tp_in_cand);
        Var g = ad::scale(giou_sum_graph(tp_rows, tp_cells, tp_gts, image_h, image_w), -1.0);
        out.giou_term = g.value()(0, 0);
        total = ad::add(total, g);
    }
    if (!tp_fn_cells.empty()) {
        Var y = ad::gather_rows(fwd.y_o, tp_fn_cells);
        Var d = ad::add_const(y, -1.0);
        Var s = ad::sum_all(ad::mul(d, d));
        out.tp_fn_objectness_term = s.value()(0, 0);
        total = ad::add(total, s);
    }
    if (!fp_cells.empty()) {
        Var y = ad::gather_rows(fwd.y_o, fp_cells);
        Var s = ad::sum_all(ad::mul(y, y));
        out.fp_objectness_term = s.value()(0, 0);
        total = ad::add(total, s);
    }
    out.total = total.value()(0, 0);
    out.total_var = total;
    return out;
}

Mat render_gaussian_target(const std::vector<Box>& gts, int grid_h, int grid_w, double sigma) {
    GECO_CHECK(sigma > 0, "gaussian sigma must be positive");
    Mat target(grid_h, grid_w);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (const Box& gt : gts) {
        const double gr = (gt.cy() - 0.5) / 2.0;
        const double gc = (gt.cx() - 0.5) / 2.0;
        for (int i = 0; i < grid_h; ++i) {
            for (int j = 0; j < grid_w; ++j) {
                const double d2 = (i - gr) * (i - gr) + (j - gc) * (j - gc);
                const double v = d2 == 0.0 ? 1.0 : std::exp(-d2 * inv);
                target(i, j) = std::max(target(i, j), v);
            }
        }
    }
    return target;
}

double gauss_sigma_cells(const std::vector<Box>& exemplars) {
    if (exemplars.empty()) return 1.0;
    double mean_extent = 0;
    for (const Box& b : exemplars) mean_extent += (b.width() + b.height()) / 2.0;
    mean_extent /= static_cast<double>(exemplars.size());
    return std::max(1.0, mean_extent / 2.0 / 4.0);  // pixels -> output cells -> /4
}

LossBreakdown gauss_surrogate_loss(const DetectionField& field, const std::vector<Box>& gts,
                                   double sigma, int image_h, int image_w) {
    const Mat target = render_gaussian_target(gts, field.grid_h, field.grid_w, sigma);
    LossBreakdown out;
    double mse = 0;
    for (size_t i = 0; i < target.numel(); ++i) {
        const double d = field.y_o[i] - target[i];
        mse += d * d;
    }
    mse /= static_cast<double>(target.numel());
    out.tp_fn_objectness_term = mse;
    for (const Box& gt : gts) {
        const int row = center_cell_row(gt, field.grid_h);
        const int col = center_cell_col(gt, field.grid_w);
        const Box pred = decode_unclipped(row, col, field.y_bb.row(row * field.grid_w + col),
                                          image_h, image_w);
        out.giou_term -= geometry::giou(pred, gt);
    }
    out.total = out.giou_term + out.tp_fn_objectness_term;
    return out;
}

LossBreakdown gauss_surrogate_loss_graph(Model& model, const ForwardResult& fwd,
                                         const std::vector<Box>& gts, double sigma,
                                         int image_h, int image_w) {
    Mat target_grid = render_gaussian_target(gts, fwd.grid_h, fwd.grid_w, sigma);
    Mat target_col(fwd.grid_h * fwd.grid_w, 1);
    std::copy(target_grid.data(), target_grid.data() + target_grid.numel(), target_col.data());

    Var diff = ad::sub(fwd.y_o, ad::constant(std::move(target_col)));
    Var total = ad::mean_all(ad::mul(diff, diff));

    LossBreakdown out;
    out.tp_fn_objectness_term = total.value()(0, 0);
    if (!gts.empty()) {
        std::vector<int> cells;
        std::vector<std::pair<int, int>> rc;
        for (const Box& gt : gts) {
            const int row = center_cell_row(gt, fwd.grid_h);
            const int col = center_cell_col(gt, fwd.grid_w);
            cells.push_back(row * fwd.grid_w + col);
            rc.emplace_back(row, col);
        }
        Var tlrb = model.box_head_rows(ad::gather_rows(fwd.q_hr, cells));
        Var g = ad::scale(giou_sum_graph(tlrb, rc, gts, image_h, image_w), -1.0);
        out.giou_term = g.value()(0, 0);
        total = ad::add(total, g);
    }
    out.total = total.value()(0, 0);
    out.total_var = total;
    return out;
}

}  // namespace geco::loss

namespace geco {

void AdamW::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& [name, var] : params.all()) {
        if (!var.requires_grad() || !var.has_grad()) continue;
        Mat& p = var.value();
        const Mat& g = var.grad();
        auto& [m1, m2] = moments_[name];
        if (m1.empty()) {
            m1 = Mat(p.rows(), p.cols());
            m2 = Mat(p.rows(), p.cols());
        }
        const bool decay = weight_decay > 0 && p.rows() > 1;
        for (size_t i = 0; i < p.numel(); ++i) {
            if (decay) p[i] -= lr * weight_decay * p[i];
            m1[i] = beta1 * m1[i] + (1.0 - beta1) * g[i];
            m2[i] = beta2 * m2[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + eps);
        }
    }
}

void AdamW::zero_grads(ParamStore& params) const {
    for (auto& [name, var] : params.all()) var.zero_grad();
}

}  // namespace geco
