#pragma once

#include <map>
#include <utility>
#include <vector>

#include "geco/assignment.hpp"
#include "geco/autodiff.hpp"
#include "geco/geometry.hpp"
#include "geco/mat.hpp"
#include "geco/maxima.hpp"
#include "geco/model.hpp"

namespace geco {

/// Per-step loss report. For the Gaussian surrogate the MSE component is
/// reported in tp_fn_objectness_term and the counts stay zero.
struct LossBreakdown {
    double total = 0;
    double giou_term = 0;
    double tp_fn_objectness_term = 0;
    double fp_objectness_term = 0;
    int tp = 0, fp = 0, fn = 0;
    ad::Var total_var;  // defined only on the graph-building paths
};

namespace loss {

/// tlrb fractions at an output cell to an absolute (unclipped) box. The
/// training loss keeps negative/overflowing corners so box gradients never
/// saturate against the image border.
Box decode_unclipped(int row, int col, const double* tlrb, int image_h, int image_w);

/// Candidate selection shared by both loss paths: 3x3 local maxima of the
/// objectness grid, median-filtered. Sorted score desc, raster asc.
std::vector<maxima::LocalMax> surviving_maxima(const Mat& y_o_grid);

/// Dense detection loss on an already materialized field (selection and
/// labels included). Value-level: no graph is built.
LossBreakdown dense_detection_loss(const DetectionField& field, const std::vector<Box>& gts,
                                   int image_h, int image_w);

/// Dense detection loss as a differentiable graph over a forward result.
/// The maxima set and TP/FP/FN labels are fixed constants of the step;
/// gradients flow through the objectness values and the decoded boxes at
/// the selected cells only. Box parameters are evaluated sparsely via the
/// box head on the gathered query rows.
LossBreakdown dense_detection_loss_graph(Model& model, const ForwardResult& fwd,
                                         const std::vector<Box>& gts, int image_h,
                                         int image_w);

/// Unit-height Gaussians at the gt box centers (output-grid coordinates),
/// combined per cell by maximum.
Mat render_gaussian_target(const std::vector<Box>& gts, int grid_h, int grid_w, double sigma);

/// Pretraining kernel width: max(1, mean exemplar extent in output cells / 4).
double gauss_sigma_cells(const std::vector<Box>& exemplars);

/// Classical surrogate: mean squared error of y_O against the rendered
/// target, plus the gIoU term of the detection loss evaluated at the
/// gt-center cells (so the box head still trains).
LossBreakdown gauss_surrogate_loss(const DetectionField& field, const std::vector<Box>& gts,
                                   double sigma, int image_h, int image_w);

LossBreakdown gauss_surrogate_loss_graph(Model& model, const ForwardResult& fwd,
                                         const std::vector<Box>& gts, double sigma,
                                         int image_h, int image_w);

}  // namespace loss

/// Adam with decoupled weight decay. Decay applies to weight matrices only
/// (every parameter with a single row — biases, normalization scales and
/// shifts, the learned zero-shot prototype — is exempt). Parameters whose
/// gradient is absent are skipped, so frozen subsets stay untouched.
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;

    void step(ParamStore& params);
    void zero_grads(ParamStore& params) const;

private:
    int64_t t_ = 0;
    std::map<std::string, std::pair<Mat, Mat>> moments_;
};

}  // namespace geco
