#include "geco/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "geco/maxima.hpp"

namespace geco::pipeline {

using ad::Var;

// ---------------------------------------------------------------------------
// Config

std::string PipelineConfig::to_json() const {
    nlohmann::json j;
    j["d"] = model.d;
    j["heads"] = model.heads;
    j["n_p"] = model.n_p;
    j["n_q"] = model.n_q;
    j["r"] = model.r;
    j["d_hq"] = model.d_hq;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["batch"] = batch;
    j["tau"] = tau;
    j["dedup_iou"] = dedup_iou;
    j["sigma_pretrain"] = sigma_pretrain;
    j["seed"] = seed;
    return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("config", std::string("invalid JSON: ") + e.what());
    }
    PipelineConfig c;
    c.model.d = j.value("d", c.model.d);
    c.model.heads = j.value("heads", c.model.heads);
    c.model.n_p = j.value("n_p", c.model.n_p);
    c.model.n_q = j.value("n_q", c.model.n_q);
    c.model.r = j.value("r", c.model.r);
    c.model.d_hq = j.value("d_hq", c.model.d_hq);
    c.model.validate();
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch = j.value("batch", c.batch);
    c.tau = j.value("tau", c.tau);
    c.dedup_iou = j.value("dedup_iou", c.dedup_iou);
    c.sigma_pretrain = j.value("sigma_pretrain", c.sigma_pretrain);
    c.seed = j.value("seed", c.seed);
    GECO_CHECK(c.batch >= 1, "batch must be >= 1");
    GECO_CHECK(c.lr >= 0, "lr must be >= 0");
    return c;
}

PipelineConfig PipelineConfig::from_json_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw SchemaError(path, "cannot open config file");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json(text);
}

// ---------------------------------------------------------------------------
// Inference

namespace {

int round_up_to(int v, int r) { return (v + r - 1) / r * r; }

std::vector<Box> scale_boxes(const std::vector<Box>& boxes, double s) {
    std::vector<Box> out;
    out.reserve(boxes.size());
    for (const Box& b : boxes) out.push_back(Box{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s});
    return out;
}

/// extract_detections with the box field evaluated only at the surviving
/// maxima (equivalent to the dense variant; the box head is row-wise).
std::vector<ScoredBox> sparse_detections(Model& model, const ForwardResult& fwd, double tau,
                                         int canvas_h, int canvas_w) {
    Mat grid(fwd.grid_h, fwd.grid_w);
    std::copy(fwd.y_o.value().data(), fwd.y_o.value().data() + fwd.y_o.value().numel(),
              grid.data());
    Mat gated = grid;
    for (size_t i = 0; i < gated.numel(); ++i)
        if (gated[i] < tau) gated[i] = 0.0;
    std::vector<maxima::LocalMax> peaks = maxima::local_maxima_3x3(gated);
    peaks.erase(std::remove_if(peaks.begin(), peaks.end(),
                               [&](const maxima::LocalMax& m) {
                                   return grid(m.row, m.col) < tau;
                               }),
                peaks.end());
    if (peaks.empty()) return {};

    std::vector<int> cells(peaks.size());
    for (size_t i = 0; i < peaks.size(); ++i)
        cells[i] = peaks[i].row * fwd.grid_w + peaks[i].col;
    const Mat tlrb = model.box_head_rows(ad::gather_rows(fwd.q_hr, cells)).value();

    std::vector<ScoredBox> dets;
    dets.reserve(peaks.size());
    for (size_t i = 0; i < peaks.size(); ++i) {
        const double* row = tlrb.row(static_cast<int>(i));
        const auto box = geometry::tlrb_to_box(peaks[i].row, peaks[i].col, row[0], row[1],
                                               row[2], row[3], canvas_h, canvas_w);
        if (!box) continue;
        dets.push_back(ScoredBox{*box, grid(peaks[i].row, peaks[i].col)});
    }
    return dets;
}

}  // namespace

InferenceResult infer_with_decision(Model& model, const image::ImageU8& img,
                                    const std::vector<Box>* exemplars,
                                    const data::ResizeDecision& rd, const PipelineConfig& cfg) {
    const double s = rd.scale_factor;
    image::ImageU8 scaled;
    if (s == 1.0) {
        scaled = img;
    } else {
        scaled = image::resize_bilinear(img, std::max(1, (int)std::lround(img.width * s)),
                                        std::max(1, (int)std::lround(img.height * s)));
    }
    GECO_CHECK(scaled.width <= rd.canvas_w && scaled.height <= rd.canvas_h,
               "resize decision canvas is smaller than the scaled image");
    const image::ImageU8 canvas = image::pad_to(scaled, rd.canvas_w, rd.canvas_h);

    std::vector<Box> scaled_ex;
    const std::vector<Box>* ex_ptr = nullptr;
    if (exemplars != nullptr && !exemplars->empty()) {
        scaled_ex = scale_boxes(*exemplars, s);
        ex_ptr = &scaled_ex;
    }

    InferenceResult out;
    out.resize = rd;
    {
        ad::NoGradGuard ng;
        ForwardResult fwd =
            model.forward(image::to_matrix(canvas), ex_ptr, rd.canvas_h, rd.canvas_w);
        std::vector<ScoredBox> dets =
            sparse_detections(model, fwd, cfg.tau, rd.canvas_h, rd.canvas_w);
        const std::vector<int> kept = geometry::nms_boxes(dets, cfg.dedup_iou);
        for (const int i : kept) {
            Box b = dets[i].box;
            b.x1 = std::clamp(b.x1 / s, 0.0, static_cast<double>(img.width));
            b.y1 = std::clamp(b.y1 / s, 0.0, static_cast<double>(img.height));
            b.x2 = std::clamp(b.x2 / s, 0.0, static_cast<double>(img.width));
            b.y2 = std::clamp(b.y2 / s, 0.0, static_cast<double>(img.height));
            if (b.x2 <= b.x1 || b.y2 <= b.y1) continue;
            out.boxes.push_back(ScoredBox{b, dets[i].score});
        }
    }
    out.count = static_cast<int>(out.boxes.size());
    return out;
}

InferenceResult infer(Model& model, const image::ImageU8& img,
                      const std::vector<Box>* exemplars, const PipelineConfig& cfg) {
    const int r = model.config().r;
    data::ResizeDecision rd;
    if (exemplars != nullptr && !exemplars->empty()) {
        rd = data::resize_policy(*exemplars, img.width, img.height, r);
    } else {
        rd.scale_factor = 1.0;
        rd.canvas_w = round_up_to(img.width, r);
        rd.canvas_h = round_up_to(img.height, r);
    }
    return infer_with_decision(model, img, exemplars, rd, cfg);
}

InferenceResult infer_zero_shot_two_pass(Model& model, const image::ImageU8& img,
                                         const PipelineConfig& cfg) {
    InferenceResult pass1 = infer(model, img, nullptr, cfg);
    if (pass1.boxes.empty()) return pass1;
    std::vector<Box> est;
    est.reserve(pass1.boxes.size());
    for (const ScoredBox& d : pass1.boxes) est.push_back(d.box);
    const data::ResizeDecision rd =
        data::resize_policy(data::mean_extent(est), img.width, img.height, model.config().r);
    return infer_with_decision(model, img, nullptr, rd, cfg);
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr int kValScenes = 48;   // per-epoch validation subset
constexpr int kValCanvas = 256;  // cheap fixed-canvas validation protocol

struct PreparedSample {
    Mat matrix;
    int h = 0, w = 0;
    std::vector<Box> gts;
    std::vector<Box> exemplars;  // possibly truncated to the sampled k
};

/// Augmentation: random scale in [0.8, 1.2], exemplar count in {1, full},
/// and a canvas curriculum (native, 256, 512) so attention sees padded
/// regions of different sizes during training. The 512 canvas is limited
/// to the first slot of a batch to bound peak graph memory.
PreparedSample prepare_train_sample(const data::Scene& scene, Rng& rng, int r,
                                    bool allow_large_canvas, bool zero_shot) {
    PreparedSample ps;
    const double s = rng.uniform(0.8, 1.2);
    const int sw = std::max(1, static_cast<int>(std::lround(scene.width * s)));
    const int sh = std::max(1, static_cast<int>(std::lround(scene.height * s)));
    image::ImageU8 scaled = image::resize_bilinear(scene.pixels, sw, sh);

    int cw = round_up_to(sw, r), ch = round_up_to(sh, r);
    const double u = rng.uniform();
    if (allow_large_canvas && u < 0.05 && sw <= 512 && sh <= 512) {
        cw = ch = 512;
    } else if (u < 0.17 && sw <= 256 && sh <= 256) {
        cw = ch = 256;
    }
    const image::ImageU8 canvas = image::pad_to(scaled, cw, ch);
    ps.matrix = image::to_matrix(canvas);
    ps.h = ch;
    ps.w = cw;
    ps.gts = scale_boxes(scene.gt_boxes, s);
    if (!zero_shot) {
        std::vector<Box> ex = scale_boxes(scene.exemplars, s);
        GECO_CHECK(!ex.empty(), "scene " + scene.id + " lacks exemplars");
        const size_t k = rng.bernoulli(0.5) ? 1 : ex.size();
        ex.resize(std::min(ex.size(), k));
        ps.exemplars = std::move(ex);
    }
    return ps;
}

/// Deployment-canvas sample: the resize policy of the unaugmented scene
/// fixes the canvas, and the scale jitter happens inside it (clamped so the
/// content still fits). Box fractions are relative to the input dimensions,
/// so a model is only calibrated for the canvas sizes it saw in training;
/// the alignment phase and zero-shot fitting use this preparation to match
/// the inference protocol exactly. Zero-shot samples take the
/// reference-extent decision (no rescaling) because inference has no
/// exemplars to size from either.
PreparedSample prepare_align_sample(const data::Scene& scene, Rng& rng, int r,
                                    bool zero_shot) {
    const data::ResizeDecision rd =
        zero_shot ? data::resize_policy(80.0, scene.width, scene.height, r)
                  : data::resize_policy(scene.exemplars, scene.width, scene.height, r);
    const double hi =
        std::min({1.2, rd.canvas_w / (rd.scale_factor * scene.width),
                  rd.canvas_h / (rd.scale_factor * scene.height)});
    const double s = rd.scale_factor * rng.uniform(0.8, std::max(0.8, hi));
    const int sw = std::min(rd.canvas_w, std::max(1, (int)std::lround(scene.width * s)));
    const int sh = std::min(rd.canvas_h, std::max(1, (int)std::lround(scene.height * s)));
    image::ImageU8 scaled = image::resize_bilinear(scene.pixels, sw, sh);

    PreparedSample ps;
    ps.matrix = image::to_matrix(image::pad_to(scaled, rd.canvas_w, rd.canvas_h));
    ps.h = rd.canvas_h;
    ps.w = rd.canvas_w;
    ps.gts = scale_boxes(scene.gt_boxes, s);
    if (!zero_shot) {
        std::vector<Box> ex = scale_boxes(scene.exemplars, s);
        GECO_CHECK(!ex.empty(), "scene " + scene.id + " lacks exemplars");
        const size_t k = rng.bernoulli(0.5) ? 1 : ex.size();
        ex.resize(std::min(ex.size(), k));
        ps.exemplars = std::move(ex);
    }
    return ps;
}

struct BatchStats {
    double total = 0, giou = 0;
    int tp = 0, fp = 0, fn = 0;
};

/// One optimizer step over a batch: per-sample graphs, mean loss, single
/// backward pass. Throws NonFiniteLoss with the in-batch index.
BatchStats train_batch(Model& model, AdamW& opt, const std::vector<PreparedSample>& batch,
                       bool gauss_mode, double sigma_pretrain, bool zero_shot) {
    Var sum;
    BatchStats st;
    for (size_t i = 0; i < batch.size(); ++i) {
        const PreparedSample& ps = batch[i];
        const std::vector<Box>* ex = zero_shot || ps.exemplars.empty() ? nullptr : &ps.exemplars;
        ForwardResult fwd = model.forward(ps.matrix, ex, ps.h, ps.w);
        LossBreakdown bd;
        if (gauss_mode) {
            const double sigma = sigma_pretrain > 0
                                     ? sigma_pretrain
                                     : loss::gauss_sigma_cells(zero_shot || ps.exemplars.empty()
                                                                   ? ps.gts
                                                                   : ps.exemplars);
            bd = loss::gauss_surrogate_loss_graph(model, fwd, ps.gts, sigma, ps.h, ps.w);
        } else {
            bd = loss::dense_detection_loss_graph(model, fwd, ps.gts, ps.h, ps.w);
        }
        if (!std::isfinite(bd.total)) throw NonFiniteLoss(static_cast<int>(i));
        st.total += bd.total;
        st.giou += bd.giou_term;
        st.tp += bd.tp;
        st.fp += bd.fp;
        st.fn += bd.fn;
        sum = sum.defined() ? ad::add(sum, bd.total_var) : bd.total_var;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    ad::backward(ad::scale(sum, inv));
    opt.step(model.params());
    opt.zero_grads(model.params());
    st.total *= inv;
    st.giou *= inv;
    return st;
}

void write_record(std::ostream* log, int step, const char* mode, const BatchStats& st,
                  double lr) {
    if (log == nullptr) return;
    nlohmann::json j;
    j["step"] = step;
    j["mode"] = mode;
    j["total"] = st.total;
    j["giou_term"] = st.giou;
    j["tp"] = st.tp;
    j["fp"] = st.fp;
    j["fn"] = st.fn;
    j["lr"] = lr;
    (*log) << j.dump() << "\n";
}

double quick_val_mae(Model& model, const std::vector<data::Scene>& val,
                     const PipelineConfig& cfg) {
    const int n = std::min<int>(kValScenes, static_cast<int>(val.size()));
    if (n == 0) return std::numeric_limits<double>::infinity();
    data::ResizeDecision rd;
    rd.scale_factor = 1.0;
    rd.canvas_w = rd.canvas_h = kValCanvas;
    double mae = 0;
    for (int i = 0; i < n; ++i) {
        const data::Scene& s = val[i];
        GECO_CHECK(s.width <= kValCanvas && s.height <= kValCanvas,
                   "validation scene exceeds the validation canvas");
        InferenceResult res = infer_with_decision(model, s.pixels, &s.exemplars, rd, cfg);
        mae += std::fabs(res.count - static_cast<double>(s.gt_boxes.size()));
    }
    return mae / n;
}

/// Deployment-protocol validation: the real inference path (policy canvas,
/// first three exemplars) scored on both count MAE and AP50, the two
/// qualities the alignment phase trades off.
void align_val(Model& model, const std::vector<data::Scene>& val, const PipelineConfig& cfg,
               double* mae, double* ap50) {
    const int n = std::min<int>(kValScenes, static_cast<int>(val.size()));
    std::vector<std::vector<ScoredBox>> preds;
    std::vector<std::vector<Box>> gts;
    double err = 0;
    for (int i = 0; i < n; ++i) {
        const data::Scene& s = val[i];
        std::vector<Box> ex(s.exemplars.begin(),
                            s.exemplars.begin() + std::min<size_t>(3, s.exemplars.size()));
        const InferenceResult res = infer(model, s.pixels, &ex, cfg);
        err += std::fabs(res.count - static_cast<double>(s.gt_boxes.size()));
        preds.push_back(res.boxes);
        gts.push_back(s.gt_boxes);
    }
    const EvalReport rep = metrics::evaluate(preds, gts);
    *mae = err / n;
    *ap50 = rep.ap50;
}

std::map<std::string, Mat> copy_params(const ParamStore& params) {
    std::map<std::string, Mat> out;
    for (const auto& [name, var] : params.all()) out.emplace(name, var.value());
    return out;
}

void restore_params(ParamStore& params, const std::map<std::string, Mat>& snapshot) {
    for (auto& [name, var] : params.all()) var.value() = snapshot.at(name);
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
    return idx;
}

}  // namespace

FitResult fit(const std::vector<data::Scene>& train, const std::vector<data::Scene>& val,
              const PipelineConfig& cfg, const FitOptions& opt, std::ostream* log) {
    GECO_CHECK(!train.empty() && !val.empty(), "fit needs nonempty train and val splits");
    for (const auto& s : train)
        GECO_CHECK(s.loaded(), "train scene " + s.id + " has no pixels");

    FitResult out;
    out.model = Model::init(cfg.model, cfg.seed);
    const int r = cfg.model.r;
    const int total_epochs = opt.pretrain_epochs + opt.epochs;

    std::map<std::string, Mat> best = copy_params(out.model.params());
    double best_mae = std::numeric_limits<double>::infinity();

    int step = 0;
    for (int phase = 0; phase < 2; ++phase) {
        const bool gauss_mode = opt.gauss_only || phase == 0;
        const int epochs_here = phase == 0 ? opt.pretrain_epochs
                                           : total_epochs - opt.pretrain_epochs;
        if (epochs_here == 0) continue;
        AdamW adam;  // fresh moments per phase (the objective changes)
        adam.lr = cfg.lr;
        adam.weight_decay = cfg.weight_decay;
        for (int e = 0; e < epochs_here; ++e) {
            const int epoch_index = phase == 0 ? e : opt.pretrain_epochs + e;
            Rng order_rng = Rng::derived(cfg.seed, 1000 + epoch_index);
            Rng aug_rng = Rng::derived(cfg.seed, 2000 + epoch_index);
            const std::vector<int> order =
                shuffled_indices(static_cast<int>(train.size()), order_rng);
            for (size_t b = 0; b < order.size(); b += cfg.batch) {
                std::vector<PreparedSample> batch;
                for (size_t i = b; i < std::min(order.size(), b + cfg.batch); ++i)
                    batch.push_back(prepare_train_sample(train[order[i]], aug_rng, r,
                                                         /*allow_large_canvas=*/batch.empty(),
                                                         /*zero_shot=*/false));
                const BatchStats st = train_batch(out.model, adam, batch, gauss_mode,
                                                  cfg.sigma_pretrain, /*zero_shot=*/false);
                ++step;  // 1-based in the log; the last record carries steps
                write_record(log, step, gauss_mode ? "gauss" : "dense", st, adam.lr);
            }
            const double mae = quick_val_mae(out.model, val, cfg);
            out.val_mae.push_back(mae);
            if (!opt.quiet && log != nullptr)
                (*log) << "{\"epoch\":" << epoch_index << ",\"val_mae\":" << mae << "}\n";
            if (mae < best_mae) {
                best_mae = mae;
                best = copy_params(out.model.params());
                out.best_epoch = epoch_index;
            }
        }
    }
    restore_params(out.model.params(), best);

    // Alignment phase: the epochs above train at small canvases for speed,
    // but box fractions are canvas-relative, so the deployable model needs
    // steps at the canvas the resize policy actually produces. Single-sample
    // batches bound the graph memory at the large canvas. Validation probes
    // run the real inference path; the best probe wins, scored so one point
    // of AP50 weighs as much as ten points of count MAE.
    if (opt.align_steps > 0) {
        AdamW adam;
        adam.lr = cfg.lr * 0.3;  // short phase near a minimum: smaller steps
        adam.weight_decay = cfg.weight_decay;
        Rng rng = Rng::derived(cfg.seed, 3000);
        const bool gauss_mode = opt.gauss_only;
        const int probe_every = std::max(1, opt.align_steps / 4);
        std::map<std::string, Mat> align_best = copy_params(out.model.params());
        double align_best_score = -std::numeric_limits<double>::infinity();
        for (int i = 1; i <= opt.align_steps; ++i) {
            const data::Scene& scene =
                train[rng.uniform_int(0, static_cast<int>(train.size()) - 1)];
            std::vector<PreparedSample> batch;
            batch.push_back(prepare_align_sample(scene, rng, r, /*zero_shot=*/false));
            const BatchStats st = train_batch(out.model, adam, batch, gauss_mode,
                                              cfg.sigma_pretrain, /*zero_shot=*/false);
            ++step;
            write_record(log, step, gauss_mode ? "gauss-align" : "dense-align", st, adam.lr);
            if (i % probe_every == 0 || i == opt.align_steps) {
                double mae = 0, ap50 = 0;
                align_val(out.model, val, cfg, &mae, &ap50);
                out.val_mae.push_back(mae);
                if (!opt.quiet && log != nullptr)
                    (*log) << "{\"align_step\":" << i << ",\"val_mae\":" << mae
                           << ",\"val_ap50\":" << ap50 << "}\n";
                const double score = ap50 - 0.1 * mae;
                if (score > align_best_score) {
                    align_best_score = score;
                    align_best = copy_params(out.model.params());
                }
            }
        }
        restore_params(out.model.params(), align_best);
    }

    out.steps = step;
    return out;
}

void fit_zero_shot(Model& model, const std::vector<data::Scene>& train,
                   const PipelineConfig& cfg, int epochs, std::ostream* log) {
    GECO_CHECK(!train.empty(), "fit_zero_shot needs training scenes");
    for (auto& [name, var] : model.params().all())
        var.node()->requires_grad = name.rfind("zs.", 0) == 0;

    AdamW adam;
    adam.lr = cfg.lr;
    adam.weight_decay = cfg.weight_decay;
    const int r = model.config().r;
    int step = 0;
    // Deployment-canvas samples, one per step: the zero-shot path shares the
    // box head, so it must train at the same canvas the head is calibrated
    // for, and a single large-canvas graph per step bounds peak memory.
    for (int e = 0; e < epochs; ++e) {
        Rng order_rng = Rng::derived(cfg.seed, 5000 + e);
        Rng aug_rng = Rng::derived(cfg.seed, 6000 + e);
        const std::vector<int> order = shuffled_indices(static_cast<int>(train.size()),
                                                        order_rng);
        for (const int idx : order) {
            std::vector<PreparedSample> batch;
            batch.push_back(prepare_align_sample(train[idx], aug_rng, r, /*zero_shot=*/true));
            const BatchStats st = train_batch(model, adam, batch, /*gauss_mode=*/false,
                                              cfg.sigma_pretrain, /*zero_shot=*/true);
            ++step;
            write_record(log, step, "dense", st, adam.lr);
        }
    }
    for (auto& [name, var] : model.params().all()) var.node()->requires_grad = true;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_dataset(Model& model, const std::vector<data::Scene>& scenes,
                            const PipelineConfig& cfg, EvalMode mode) {
    if (scenes.empty()) throw EmptyDataset();
    std::vector<std::vector<ScoredBox>> preds;
    std::vector<std::vector<Box>> gts;
    preds.reserve(scenes.size());
    gts.reserve(scenes.size());
    for (const data::Scene& s : scenes) {
        GECO_CHECK(s.loaded(), "scene " + s.id + " has no pixels");
        InferenceResult res;
        switch (mode) {
            case EvalMode::Few: {
                std::vector<Box> ex(s.exemplars.begin(),
                                    s.exemplars.begin() + std::min<size_t>(3, s.exemplars.size()));
                res = infer(model, s.pixels, &ex, cfg);
                break;
            }
            case EvalMode::One: {
                GECO_CHECK(!s.exemplars.empty(), "scene " + s.id + " lacks exemplars");
                std::vector<Box> ex{s.exemplars.front()};
                res = infer(model, s.pixels, &ex, cfg);
                break;
            }
            case EvalMode::Zero:
                res = infer_zero_shot_two_pass(model, s.pixels, cfg);
                break;
        }
        preds.push_back(std::move(res.boxes));
        gts.push_back(s.gt_boxes);
    }
    return metrics::evaluate(preds, gts);
}

}  // namespace geco::pipeline
