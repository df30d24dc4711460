#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "geco/data.hpp"
#include "geco/image.hpp"
#include "geco/loss.hpp"
#include "geco/metrics.hpp"
#include "geco/model.hpp"

namespace geco::pipeline {

/// Flat run configuration: model architecture plus training / inference
/// knobs, serialized as one JSON object with keys {d, heads, n_p, n_q, r,
/// d_hq, lr, weight_decay, batch, tau, dedup_iou, sigma_pretrain, seed}.
struct PipelineConfig {
    ModelConfig model;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    int batch = 8;
    double tau = 0.4;        // inference objectness threshold
    double dedup_iou = 0.5;  // duplicate-removal IoU
    double sigma_pretrain = -1.0;  // <= 0: derived per sample from exemplars
    uint64_t seed = 0;

    std::string to_json() const;
    static PipelineConfig from_json(const std::string& text);
    static PipelineConfig from_json_file(const std::string& path);
};

struct InferenceResult {
    std::vector<ScoredBox> boxes;  // original-image coordinates
    int count = 0;                 // == boxes.size()
    data::ResizeDecision resize;
};

/// Few-shot inference (exemplars given): resize policy, forward, threshold
/// + 3x3 maxima, box decoding, duplicate suppression, inverse mapping.
/// Zero-shot (exemplars null): single pass at native scale on a canvas
/// rounded up to the stride.
InferenceResult infer(Model& model, const image::ImageU8& img,
                      const std::vector<Box>* exemplars, const PipelineConfig& cfg);

/// Inference under an externally chosen resize decision.
InferenceResult infer_with_decision(Model& model, const image::ImageU8& img,
                                    const std::vector<Box>* exemplars,
                                    const data::ResizeDecision& rd, const PipelineConfig& cfg);

/// Zero-shot with size estimation: pass 1 at native scale; the mean extent
/// of its detections feeds the resize policy for pass 2. No detections in
/// pass 1 returns pass 1.
InferenceResult infer_zero_shot_two_pass(Model& model, const image::ImageU8& img,
                                         const PipelineConfig& cfg);

struct FitOptions {
    int pretrain_epochs = 2;  // phase A (gaussian surrogate)
    int epochs = 12;          // phase B (dense detection loss)
    bool gauss_only = false;  // ablation: run every epoch in gauss mode
    bool quiet = false;
};

struct FitResult {
    Model model;                  // best-validation-MAE parameters
    std::vector<double> val_mae;  // one entry per epoch (both phases)
    int best_epoch = -1;
    int steps = 0;
};

/// Two-phase training. Per-sample augmentation: random scale in [0.8,1.2],
/// random exemplar count in {1, 3}, and canvas padding at a mix of sizes
/// so attention learns to ignore padded regions. One JSONL record per
/// optimizer step is written to `log` (keys step, mode, total, giou_term,
/// tp, fp, fn, lr). Validation MAE runs after every epoch on up to 48 val
/// scenes; the best epoch's parameters are returned.
FitResult fit(const std::vector<data::Scene>& train, const std::vector<data::Scene>& val,
              const PipelineConfig& cfg, const FitOptions& opt, std::ostream* log = nullptr);

/// Trains only the zero-shot prototype and its attention block (all other
/// parameters frozen, bit-identical afterwards) with the dense loss on the
/// zero-shot forward path.
void fit_zero_shot(Model& model, const std::vector<data::Scene>& train,
                   const PipelineConfig& cfg, int epochs = 10, std::ostream* log = nullptr);

enum class EvalMode { Few, One, Zero };

/// Runs inference over every scene (Few: up to 3 exemplars; One: first
/// exemplar; Zero: two-pass exemplar-free) and aggregates count errors and
/// detection AP against the scene ground truths.
EvalReport evaluate_dataset(Model& model, const std::vector<data::Scene>& scenes,
                            const PipelineConfig& cfg, EvalMode mode);

}  // namespace geco::pipeline
