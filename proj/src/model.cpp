#include "geco/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace geco {

using ad::Var;

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
    GECO_CHECK(d > 0 && d % 4 == 0, "d must be a positive multiple of 4");
    GECO_CHECK(heads > 0 && d % heads == 0, "d must be divisible by the head count");
    GECO_CHECK(n_p >= 1 && n_q >= 1, "iteration counts must be >= 1");
    GECO_CHECK(r >= 4 && (r & (r - 1)) == 0, "stride r must be a power of two >= 4");
    GECO_CHECK(d_hq > 0, "d_hq must be positive");
    GECO_CHECK(leaky_slope > 0 && leaky_slope < 1, "leaky slope must lie in (0,1)");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["d"] = d;
    j["heads"] = heads;
    j["n_p"] = n_p;
    j["n_q"] = n_q;
    j["r"] = r;
    j["d_hq"] = d_hq;
    j["leaky_slope"] = leaky_slope;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig c;
    c.d = j.value("d", c.d);
    c.heads = j.value("heads", c.heads);
    c.n_p = j.value("n_p", c.n_p);
    c.n_q = j.value("n_q", c.n_q);
    c.r = j.value("r", c.r);
    c.d_hq = j.value("d_hq", c.d_hq);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// ParamStore

Var& ParamStore::create(const std::string& name, int rows, int cols) {
    GECO_CHECK(params_.count(name) == 0, "duplicate parameter name: " + name);
    return params_.emplace(name, Var(Mat(rows, cols), /*requires_grad=*/true))
        .first->second;
}

Var& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    GECO_CHECK(it != params_.end(), "unknown parameter: " + name);
    return it->second;
}

const Var& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    GECO_CHECK(it != params_.end(), "unknown parameter: " + name);
    return it->second;
}

size_t ParamStore::scalar_count() const {
    size_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().numel();
    return n;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

int int_log2(int x) {
    int n = 0;
    while ((1 << n) < x) ++n;
    return n;
}

void xavier_init(Mat& w, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-limit, limit);
}

// Backbone block output widths: narrow until the f_HQ tap stride, then d.
int block_width(int stride_after, int n_blocks, int block_index_1based, int r, int d, int d_hq) {
    if (block_index_1based == n_blocks) return d;
    return stride_after <= r / 4 ? d_hq : d;
}

}  // namespace

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    Rng rng(Rng::derived(seed, 0x6d6f64656cull).bits());

    auto dense = [&](const std::string& name, int rows, int cols) {
        Var& v = m.params_.create(name, rows, cols);
        xavier_init(v.value(), rows, cols, rng);
    };
    auto bias = [&](const std::string& name, int cols) { m.params_.create(name, 1, cols); };
    auto norm = [&](const std::string& prefix) {
        m.params_.create(prefix + ".g", 1, cfg.d).value().fill(1.0);
        bias(prefix + ".b", cfg.d);
    };
    auto conv = [&](const std::string& prefix, int cin, int cout) {
        Var& v = m.params_.create(prefix + ".w", 9 * cin, cout);
        xavier_init(v.value(), 9 * cin, 9 * cout, rng);
        bias(prefix + ".b", cout);
    };
    auto attn = [&](const std::string& prefix) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) dense(prefix + "." + w, cfg.d, cfg.d);
        for (const char* b : {"bq", "bk", "bv", "bo"}) bias(prefix + "." + b, cfg.d);
    };

    const int n_blocks = int_log2(cfg.r);
    int cin = 3;
    for (int i = 1; i <= n_blocks; ++i) {
        const int cout = block_width(1 << i, n_blocks, i, cfg.r, cfg.d, cfg.d_hq);
        conv("backbone.conv" + std::to_string(i), cin, cout);
        cin = cout;
    }
    norm("backbone.ln");

    dense("shape_mlp.w1", 2, cfg.d);
    bias("shape_mlp.b1", cfg.d);
    dense("shape_mlp.w2", cfg.d, cfg.d);
    bias("shape_mlp.b2", cfg.d);

    for (int i = 1; i <= cfg.n_p; ++i) {
        const std::string p = "dqe.p" + std::to_string(i);
        attn(p + ".ca");
        norm(p + ".ln");
    }
    for (int j = 1; j <= cfg.n_q; ++j) {
        const std::string p = "dqe.q" + std::to_string(j);
        attn(p + ".sa");
        norm(p + ".lnsa");
        attn(p + ".ca");
        norm(p + ".lnca");
    }

    const int n_stages = n_blocks - 1;
    int stride = cfg.r;
    for (int t = 1; t <= n_stages; ++t) {
        const bool with_hq = cfg.r >= 8 && stride == cfg.r / 4 && cfg.r / 4 >= 2;
        conv("dqd.s" + std::to_string(t), cfg.d + (with_hq ? cfg.d_hq : 0), cfg.d);
        stride /= 2;
    }

    dense("head.obj.w", cfg.d, 1);
    bias("head.obj.b", 1);
    dense("head.box.w1", cfg.d, cfg.d);
    bias("head.box.b1", cfg.d);
    dense("head.box.w2", cfg.d, cfg.d);
    bias("head.box.b2", cfg.d);
    dense("head.box.w3", cfg.d, 4);
    bias("head.box.b3", 4);

    {
        Var& pz = m.params_.create("zs.p", 1, cfg.d);
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
        for (size_t i = 0; i < pz.value().numel(); ++i) pz.value()[i] = rng.normal() * s;
    }
    attn("zs.ca");
    norm("zs.ln");

    return m;
}

// ---------------------------------------------------------------------------
// Positional encoding

const Mat& Model::positional_encoding(int h, int w) {
    const auto key = std::make_pair(h, w);
    auto it = pe_cache_.find(key);
    if (it != pe_cache_.end()) return it->second;

    const int d = cfg_.d;
    const int half = d / 2;     // first half: row code; second: column code
    const int pairs = half / 2;
    Mat pe(h * w, d);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            double* row = pe.row(i * w + j);
            for (int t = 0; t < pairs; ++t) {
                const double freq = std::pow(10000.0, -2.0 * t / half);
                row[2 * t] = std::sin(i * freq);
                row[2 * t + 1] = std::cos(i * freq);
                row[half + 2 * t] = std::sin(j * freq);
                row[half + 2 * t + 1] = std::cos(j * freq);
            }
        }
    }
    return pe_cache_.emplace(key, std::move(pe)).first->second;
}

// ---------------------------------------------------------------------------
// Network pieces

ad::Var Model::dense_mlp(const std::string& prefix, const Var& x, int n_layers,
                         bool squash_last) {
    Var t = x;
    for (int i = 1; i <= n_layers; ++i) {
        const std::string s = std::to_string(i);
        t = ad::add_rowvec(ad::matmul(t, params_.at(prefix + ".w" + s)),
                           params_.at(prefix + ".b" + s));
        if (i < n_layers)
            t = ad::leaky_relu(t, cfg_.leaky_slope);
        else if (squash_last)
            t = ad::sigmoid(t);
    }
    return t;
}

Encoded Model::backbone_encode(const Mat& image, int h0, int w0) {
    GECO_CHECK(h0 % cfg_.r == 0 && w0 % cfg_.r == 0,
               "image dimensions must be divisible by the stride r");
    GECO_CHECK(image.rows() == h0 * w0 && image.cols() == 3,
               "image must be (h0*w0) x 3 raster-major RGB");

    Encoded enc;
    Var x = ad::constant(image);
    int h = h0, w = w0;
    const int n_blocks = int_log2(cfg_.r);
    for (int i = 1; i <= n_blocks; ++i) {
        const std::string p = "backbone.conv" + std::to_string(i);
        x = ad::conv3x3(x, params_.at(p + ".w"), params_.at(p + ".b"), h, w, /*stride=*/2);
        h = (h - 1) / 2 + 1;
        w = (w - 1) / 2 + 1;
        x = ad::leaky_relu(x, cfg_.leaky_slope);
        if (cfg_.r >= 8 && (1 << i) == cfg_.r / 4) {
            enc.f_hq = x;
            enc.hq_h = h;
            enc.hq_w = w;
        }
    }
    enc.f_i = ad::layernorm_rows(x, params_.at("backbone.ln.g"), params_.at("backbone.ln.b"));
    enc.h = h;
    enc.w = w;
    return enc;
}

Var Model::attention(const std::string& prefix, const Var& q, const Var& k, const Var& v,
                     const Mat& pe_q, const Mat& pe_k) {
    GECO_CHECK(q.cols() == static_cast<size_t>(cfg_.d) && k.cols() == q.cols() &&
                   v.cols() == q.cols(),
               "attention operands must have width d");
    GECO_CHECK(k.rows() == v.rows(), "key/value row counts must match");

    Var qin = pe_q.empty() ? q : ad::add(q, ad::constant(pe_q));
    Var kin = pe_k.empty() ? k : ad::add(k, ad::constant(pe_k));
    Var qp = ad::add_rowvec(ad::matmul(qin, params_.at(prefix + ".wq")),
                            params_.at(prefix + ".bq"));
    Var kp = ad::add_rowvec(ad::matmul(kin, params_.at(prefix + ".wk")),
                            params_.at(prefix + ".bk"));
    Var vp = ad::add_rowvec(ad::matmul(v, params_.at(prefix + ".wv")),
                            params_.at(prefix + ".bv"));

    const int dh = cfg_.d / cfg_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Var heads_out;
    for (int hd = 0; hd < cfg_.heads; ++hd) {
        Var qh = ad::slice_cols(qp, hd * dh, (hd + 1) * dh);
        Var kh = ad::slice_cols(kp, hd * dh, (hd + 1) * dh);
        Var vh = ad::slice_cols(vp, hd * dh, (hd + 1) * dh);
        Var attn = ad::softmax_rows(ad::scale(ad::matmul(qh, kh, false, true), scale));
        Var oh = ad::matmul(attn, vh);
        heads_out = hd == 0 ? oh : ad::concat_cols(heads_out, oh);
    }
    Var mixed = ad::add_rowvec(ad::matmul(heads_out, params_.at(prefix + ".wo")),
                               params_.at(prefix + ".bo"));
    return ad::add(q, mixed);  // skip from the pre-encoding queries
}

Var Model::extract_appearance_prototypes(const Encoded& enc, const std::vector<Box>& exemplars,
                                         int h0, int w0) {
    GECO_CHECK(!exemplars.empty(), "appearance prototypes need at least one exemplar");
    (void)h0;
    (void)w0;
    const int k = static_cast<int>(exemplars.size());
    const int cells = enc.h * enc.w;
    const double r = static_cast<double>(cfg_.r);

    // Fractional-coverage average pooling as a constant weight matrix, so
    // gradients flow into f_i through a plain matmul.
    Mat weights(k, cells);
    for (int e = 0; e < k; ++e) {
        const Box& b = exemplars[e];
        const double gy1 = b.y1 / r, gy2 = b.y2 / r;
        const double gx1 = b.x1 / r, gx2 = b.x2 / r;
        double total = 0;
        const int i0 = std::max(0, static_cast<int>(std::floor(gy1)));
        const int i1 = std::min(enc.h, static_cast<int>(std::ceil(gy2)));
        const int j0 = std::max(0, static_cast<int>(std::floor(gx1)));
        const int j1 = std::min(enc.w, static_cast<int>(std::ceil(gx2)));
        for (int i = i0; i < i1; ++i) {
            for (int j = j0; j < j1; ++j) {
                const double cov_y = std::min(gy2, i + 1.0) - std::max(gy1, double(i));
                const double cov_x = std::min(gx2, j + 1.0) - std::max(gx1, double(j));
                if (cov_y <= 0 || cov_x <= 0) continue;
                weights(e, i * enc.w + j) = cov_y * cov_x;
                total += cov_y * cov_x;
            }
        }
        if (total <= 0) {
            // Degenerate mapping (box entirely off-grid): fall back to the
            // single nearest cell to the box center.
            const int ci = std::clamp(static_cast<int>(b.cy() / r), 0, enc.h - 1);
            const int cj = std::clamp(static_cast<int>(b.cx() / r), 0, enc.w - 1);
            weights(e, ci * enc.w + cj) = 1.0;
            total = 1.0;
        }
        for (int c = 0; c < cells; ++c) weights(e, c) /= total;
    }
    return ad::matmul(ad::constant(std::move(weights)), enc.f_i);
}

Var Model::extract_shape_prototypes(const std::vector<Box>& exemplars, int h0, int w0) {
    GECO_CHECK(!exemplars.empty(), "shape prototypes need at least one exemplar");
    const int k = static_cast<int>(exemplars.size());
    Mat wh(k, 2);
    for (int e = 0; e < k; ++e) {
        wh(e, 0) = exemplars[e].width() / w0;
        wh(e, 1) = exemplars[e].height() / h0;
    }
    Var x = ad::constant(std::move(wh));
    x = ad::add_rowvec(ad::matmul(x, params_.at("shape_mlp.w1")), params_.at("shape_mlp.b1"));
    x = ad::leaky_relu(x, cfg_.leaky_slope);
    x = ad::add_rowvec(ad::matmul(x, params_.at("shape_mlp.w2")), params_.at("shape_mlp.b2"));
    return x;
}

Var Model::build_prototypes(const Encoded& enc, const std::vector<Box>* exemplars, int h0,
                            int w0) {
    if (exemplars == nullptr) {
        Var p = attention("zs.ca", params_.at("zs.p"), enc.f_i, enc.f_i, Mat(), Mat());
        return ad::layernorm_rows(p, params_.at("zs.ln.g"), params_.at("zs.ln.b"));
    }
    // An empty list is almost certainly a caller bug; zero-shot must be
    // requested explicitly with a null pointer.
    GECO_CHECK(!exemplars->empty(), "exemplar list is empty (pass null for zero-shot)");
    Var pa = extract_appearance_prototypes(enc, *exemplars, h0, w0);
    Var ps = extract_shape_prototypes(*exemplars, h0, w0);
    return ad::concat_rows(pa, ps);
}

Var Model::dqe_generalize(const Var& f_i, const Var& prototypes) {
    Var t = f_i;
    for (int i = 1; i <= cfg_.n_p; ++i) {
        const std::string p = "dqe.p" + std::to_string(i);
        t = attention(p + ".ca", t, prototypes, prototypes, Mat(), Mat());
        t = ad::layernorm_rows(t, params_.at(p + ".ln.g"), params_.at(p + ".ln.b"));
    }
    return t;
}

Var Model::dqe_queries(const Var& f_i, const Var& generalized, int h, int w) {
    const Mat& pe = positional_encoding(h, w);
    Var q = generalized;
    for (int j = 1; j <= cfg_.n_q; ++j) {
        const std::string p = "dqe.q" + std::to_string(j);
        Var s = attention(p + ".sa", f_i, f_i, f_i, pe, pe);
        s = ad::layernorm_rows(s, params_.at(p + ".lnsa.g"), params_.at(p + ".lnsa.b"));
        q = attention(p + ".ca", s, q, q, pe, pe);
        q = ad::layernorm_rows(q, params_.at(p + ".lnca.g"), params_.at(p + ".lnca.b"));
    }
    return q;
}

Var Model::dqd_unpack(const Var& queries, const Encoded& enc) {
    const int n_stages = int_log2(cfg_.r) - 1;
    Var x = queries;
    int h = enc.h, w = enc.w, stride = cfg_.r;
    for (int t = 1; t <= n_stages; ++t) {
        if (enc.f_hq.defined() && stride == cfg_.r / 4 && cfg_.r >= 8) {
            GECO_CHECK(enc.hq_h == h && enc.hq_w == w,
                       "high-res skip grid must match the unpacking stage grid");
            x = ad::concat_cols(x, enc.f_hq);
        }
        const std::string p = "dqd.s" + std::to_string(t);
        x = ad::conv3x3(x, params_.at(p + ".w"), params_.at(p + ".b"), h, w, /*stride=*/1);
        x = ad::leaky_relu(x, cfg_.leaky_slope);
        x = ad::upsample2x(x, h, w);
        h *= 2;
        w *= 2;
        stride /= 2;
    }
    return x;
}

Var Model::objectness_head(const Var& q_hr) {
    return ad::leaky_relu(
        ad::add_rowvec(ad::matmul(q_hr, params_.at("head.obj.w")), params_.at("head.obj.b")),
        cfg_.leaky_slope);
}

Var Model::box_head_rows(const Var& rows) {
    return dense_mlp("head.box", rows, 3, /*squash_last=*/true);
}

ForwardResult Model::forward(const Mat& image, const std::vector<Box>* exemplars, int h0,
                             int w0) {
    Encoded enc = backbone_encode(image, h0, w0);
    Var p = build_prototypes(enc, exemplars, h0, w0);
    Var gen = dqe_generalize(enc.f_i, p);
    Var q = dqe_queries(enc.f_i, gen, enc.h, enc.w);
    ForwardResult out;
    out.q_hr = dqd_unpack(q, enc);
    out.y_o = objectness_head(out.q_hr);
    out.grid_h = h0 / 2;
    out.grid_w = w0 / 2;
    return out;
}

DetectionField Model::forward_field(const Mat& image, const std::vector<Box>* exemplars,
                                    int h0, int w0) {
    ForwardResult r = forward(image, exemplars, h0, w0);
    DetectionField f;
    f.grid_h = r.grid_h;
    f.grid_w = r.grid_w;
    f.y_o = Mat(r.grid_h, r.grid_w);
    std::copy(r.y_o.value().data(), r.y_o.value().data() + r.y_o.value().numel(),
              f.y_o.data());
    f.y_bb = box_head_rows(r.q_hr).value();
    return f;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[8] = {'G', 'E', 'C', 'O', 'C', 'K', 'P', '1'};

void write_u64(std::ofstream& f, uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
}  // namespace

void Model::save_checkpoint(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f.good()) throw SchemaError(path, "cannot open checkpoint for writing");
    f.write(kMagic, sizeof(kMagic));
    const std::string cfg = cfg_.to_json();
    write_u64(f, cfg.size());
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_u64(f, params_.all().size());
    for (const auto& [name, var] : params_.all()) {
        write_u64(f, name.size());
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(f, var.value().rows());
        write_u64(f, var.value().cols());
        f.write(reinterpret_cast<const char*>(var.value().data()),
                static_cast<std::streamsize>(var.value().numel() * sizeof(double)));
    }
    if (!f.good()) throw SchemaError(path, "checkpoint write failed");
}

Model Model::load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw SchemaError(path, "cannot open checkpoint");
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw SchemaError(path, "not a checkpoint file (bad magic)");
    const uint64_t cfg_len = read_u64(f);
    std::string cfg_text(cfg_len, '\0');
    f.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    Model m = Model::init(ModelConfig::from_json(cfg_text), /*seed=*/0);

    const uint64_t n = read_u64(f);
    if (n != m.params_.all().size())
        throw SchemaError(path, "checkpoint holds " + std::to_string(n) +
                                    " parameters, model expects " +
                                    std::to_string(m.params_.all().size()));
    for (uint64_t i = 0; i < n; ++i) {
        const uint64_t name_len = read_u64(f);
        std::string name(name_len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(name_len));
        const uint64_t rows = read_u64(f);
        const uint64_t cols = read_u64(f);
        if (!m.params_.has(name))
            throw SchemaError(path, "unexpected parameter in checkpoint: " + name);
        Mat& dst = m.params_.at(name).value();
        if (rows != static_cast<uint64_t>(dst.rows()) ||
            cols != static_cast<uint64_t>(dst.cols()))
            throw SchemaError(path, "shape mismatch for " + name + ": checkpoint " +
                                        std::to_string(rows) + "x" + std::to_string(cols) +
                                        ", model " + std::to_string(dst.rows()) + "x" +
                                        std::to_string(dst.cols()));
        f.read(reinterpret_cast<char*>(dst.data()),
               static_cast<std::streamsize>(dst.numel() * sizeof(double)));
        if (!f.good()) throw SchemaError(path, "truncated checkpoint while reading " + name);
    }
    return m;
}

}  // namespace geco
