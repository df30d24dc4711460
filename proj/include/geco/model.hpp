#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geco/autodiff.hpp"
#include "geco/geometry.hpp"
#include "geco/mat.hpp"
#include "geco/rng.hpp"

namespace geco {

struct ModelConfig {
    int d = 64;      // feature / query width
    int heads = 4;   // attention heads (d divisible by heads, d/heads even)
    int n_p = 3;     // prototype generalization iterations
    int n_q = 2;     // dense query construction iterations
    int r = 16;      // backbone stride (power of two >= 4)
    int d_hq = 32;   // high-resolution skip feature width
    double leaky_slope = 0.01;

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

/// Named parameter container. Iteration order is lexicographic and creation
/// order is fixed by the builder, so initialization and serialization are
/// deterministic.
class ParamStore {
public:
    ad::Var& create(const std::string& name, int rows, int cols);
    ad::Var& at(const std::string& name);
    const ad::Var& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }
    const std::map<std::string, ad::Var>& all() const { return params_; }
    std::map<std::string, ad::Var>& all() { return params_; }
    size_t scalar_count() const;

private:
    std::map<std::string, ad::Var> params_;
};

/// Objectness map plus tlrb box field at half input resolution. y_o is
/// grid_h x grid_w; y_bb is (grid_h*grid_w) x 4 raster-major.
struct DetectionField {
    Mat y_o;
    Mat y_bb;
    int grid_h = 0, grid_w = 0;
};

struct Encoded {
    ad::Var f_i;   // (h*w) x d tokens, channel-normalized
    ad::Var f_hq;  // high-res skip tokens; undefined when r < 16
    int h = 0, w = 0;        // f_i grid
    int hq_h = 0, hq_w = 0;  // f_hq grid
};

/// Differentiable forward outputs. The box field is evaluated lazily: the
/// training loss and sparse inference read boxes only at a handful of
/// cells, via box_head_rows on gathered q_hr rows.
struct ForwardResult {
    ad::Var y_o;    // (grid_h*grid_w) x 1
    ad::Var q_hr;   // (grid_h*grid_w) x d
    int grid_h = 0, grid_w = 0;
};

class Model {
public:
    Model() = default;
    static Model init(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // --- network pieces (all differentiable w.r.t. params) ---------------

    /// image is (h0*w0) x 3 raster-major RGB in [0,1].
    Encoded backbone_encode(const Mat& image, int h0, int w0);

    /// Multi-head attention + skip to q. pe_q / pe_k (possibly empty Mats)
    /// are added to queries / keys before projection; values are taken
    /// as-is. Parameters live under `prefix` (wq/wk/wv/wo + biases).
    ad::Var attention(const std::string& prefix, const ad::Var& q, const ad::Var& k,
                      const ad::Var& v, const Mat& pe_q, const Mat& pe_k);

    ad::Var extract_appearance_prototypes(const Encoded& enc, const std::vector<Box>& exemplars,
                                          int h0, int w0);
    ad::Var extract_shape_prototypes(const std::vector<Box>& exemplars, int h0, int w0);

    /// Few-shot: rows [appearance; shape] (2k x d). Zero-shot (null
    /// exemplars): the learned objectness prototype attended over the image
    /// tokens (1 x d). An empty non-null list is rejected; zero-shot must be
    /// requested explicitly with a null pointer.
    ad::Var build_prototypes(const Encoded& enc, const std::vector<Box>* exemplars, int h0,
                             int w0);

    ad::Var dqe_generalize(const ad::Var& f_i, const ad::Var& prototypes);
    ad::Var dqe_queries(const ad::Var& f_i, const ad::Var& generalized, int h, int w);
    ad::Var dqd_unpack(const ad::Var& queries, const Encoded& enc);

    /// Dense objectness head over all cells.
    ad::Var objectness_head(const ad::Var& q_hr);
    /// Box head (3-layer MLP + squashing) over the given query rows.
    ad::Var box_head_rows(const ad::Var& rows);

    ForwardResult forward(const Mat& image, const std::vector<Box>* exemplars, int h0, int w0);

    /// Contract-level forward: materializes the full detection field
    /// (dense box head included).
    DetectionField forward_field(const Mat& image, const std::vector<Box>* exemplars, int h0,
                                 int w0);

    /// Fixed 2-D sinusoidal positional encoding for an h x w token grid,
    /// cached per shape. Uses absolute cell indices, so a grid that is a
    /// crop of a larger canvas keeps identical codes.
    const Mat& positional_encoding(int h, int w);

    // --- persistence ------------------------------------------------------

    void save_checkpoint(const std::string& path) const;
    static Model load_checkpoint(const std::string& path);

private:
    ModelConfig cfg_;
    ParamStore params_;
    std::map<std::pair<int, int>, Mat> pe_cache_;

    ad::Var dense_mlp(const std::string& prefix, const ad::Var& x, int n_layers,
                      bool squash_last);
};

}  // namespace geco
