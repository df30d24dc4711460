#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "geco/model.hpp"
#include "geco/rng.hpp"
#include "test_util.hpp"

using geco::Box;
using geco::Mat;
using geco::Model;
using geco::ModelConfig;
using geco::Rng;
using geco::ad::Var;
using testutil::random_mat;

namespace {

ModelConfig tiny16() {
    ModelConfig cfg;
    cfg.d = 16;
    cfg.heads = 2;
    cfg.n_p = 2;
    cfg.n_q = 1;
    cfg.r = 16;
    cfg.d_hq = 8;
    return cfg;
}

Mat permute_rows(const Mat& m, const std::vector<int>& perm) {
    Mat out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) out(i, j) = m(perm[i], j);
    return out;
}

std::vector<int> random_perm(Rng& rng, int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[rng.uniform_int(0, i)]);
    return p;
}

double max_abs_diff(const Mat& a, const Mat& b) {
    REQUIRE(a.same_shape(b));
    double m = 0;
    for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

void set_identity(Mat& m) {
    m.fill(0.0);
    for (int i = 0; i < std::min(m.rows(), m.cols()); ++i) m(i, i) = 1.0;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation rejects malformed settings") {
    CHECK_NOTHROW(tiny16().validate());
    ModelConfig c = tiny16();
    c.d = 10;  // not a multiple of 4
    CHECK_THROWS_AS(c.validate(), geco::ShapeError);
    c = tiny16();
    c.heads = 3;  // does not divide 16
    CHECK_THROWS_AS(c.validate(), geco::ShapeError);
    c = tiny16();
    c.r = 12;  // not a power of two
    CHECK_THROWS_AS(c.validate(), geco::ShapeError);
    c = tiny16();
    c.n_q = 0;
    CHECK_THROWS_AS(c.validate(), geco::ShapeError);
    c = tiny16();
    c.leaky_slope = 1.5;
    CHECK_THROWS_AS(c.validate(), geco::ShapeError);
}

TEST_CASE("config json round-trip") {
    ModelConfig c = tiny16();
    c.leaky_slope = 0.05;
    const ModelConfig back = ModelConfig::from_json(c.to_json());
    CHECK(back.d == c.d);
    CHECK(back.heads == c.heads);
    CHECK(back.n_p == c.n_p);
    CHECK(back.n_q == c.n_q);
    CHECK(back.r == c.r);
    CHECK(back.d_hq == c.d_hq);
    CHECK(back.leaky_slope == doctest::Approx(c.leaky_slope));
}

TEST_CASE("initialization is seed-deterministic") {
    Model a = Model::init(tiny16(), 7);
    Model b = Model::init(tiny16(), 7);
    Model c = Model::init(tiny16(), 8);
    REQUIRE(a.params().all().size() == b.params().all().size());
    bool any_diff_seed = false;
    for (const auto& [name, va] : a.params().all()) {
        const Mat& ma = va.value();
        const Mat& mb = b.params().at(name).value();
        REQUIRE(ma.same_shape(mb));
        for (size_t i = 0; i < ma.numel(); ++i) CHECK(ma[i] == mb[i]);
        const Mat& mc = c.params().at(name).value();
        for (size_t i = 0; i < ma.numel(); ++i) any_diff_seed = any_diff_seed || ma[i] != mc[i];
    }
    CHECK(any_diff_seed);
}

TEST_CASE("forward emits the half-resolution field shapes") {
    Model m = Model::init(tiny16(), 1);
    Rng rng(61);
    const int h0 = 256, w0 = 256;
    Mat img = random_mat(rng, h0 * w0, 3, 0.0, 1.0);
    std::vector<Box> ex = {{30, 30, 60, 65}, {100, 90, 130, 128}, {180, 40, 210, 70}};

    geco::ad::NoGradGuard ng;
    auto fwd = m.forward(img, &ex, h0, w0);
    CHECK(fwd.grid_h == 128);
    CHECK(fwd.grid_w == 128);
    CHECK(fwd.y_o.rows() == size_t(128 * 128));
    CHECK(fwd.y_o.cols() == 1);
    CHECK(fwd.q_hr.rows() == size_t(128 * 128));
    CHECK(fwd.q_hr.cols() == 16);

    auto field = m.forward_field(img, &ex, h0, w0);
    CHECK(field.grid_h == 128);
    CHECK(field.grid_w == 128);
    CHECK(field.y_o.rows() == 128);
    CHECK(field.y_o.cols() == 128);
    CHECK(field.y_bb.rows() == 128 * 128);
    CHECK(field.y_bb.cols() == 4);
    for (size_t i = 0; i < field.y_bb.numel(); ++i) {
        CHECK(field.y_bb[i] >= 0.0);
        CHECK(field.y_bb[i] <= 1.0);
    }
}

TEST_CASE("forward rejects sizes not divisible by the stride") {
    Model m = Model::init(tiny16(), 1);
    Mat img(100 * 96, 3);
    geco::ad::NoGradGuard ng;
    CHECK_THROWS_AS(m.forward(img, nullptr, 100, 96), geco::ShapeError);
}

TEST_CASE("forward is deterministic and runs in all exemplar regimes") {
    Model m = Model::init(tiny16(), 2);
    Rng rng(62);
    const int h0 = 64, w0 = 64;
    Mat img = random_mat(rng, h0 * w0, 3, 0.0, 1.0);
    std::vector<Box> three = {{5, 5, 20, 22}, {30, 30, 45, 44}, {40, 8, 58, 25}};
    std::vector<Box> one = {three[0]};

    geco::ad::NoGradGuard ng;
    const std::vector<Box>* regimes[3] = {&three, &one, nullptr};
    for (const std::vector<Box>* ex : regimes) {
        auto f1 = m.forward(img, ex, h0, w0);
        auto f2 = m.forward(img, ex, h0, w0);
        CHECK(max_abs_diff(f1.y_o.value(), f2.y_o.value()) == 0.0);
        CHECK(max_abs_diff(f1.q_hr.value(), f2.q_hr.value()) == 0.0);
    }
}

TEST_CASE("empty exemplar list is rejected, null means zero-shot") {
    Model m = Model::init(tiny16(), 2);
    Rng rng(63);
    Mat img = random_mat(rng, 64 * 64, 3, 0.0, 1.0);
    std::vector<Box> empty;
    geco::ad::NoGradGuard ng;
    CHECK_THROWS_AS(m.forward(img, &empty, 64, 64), geco::ShapeError);
    CHECK_NOTHROW(m.forward(img, nullptr, 64, 64));
}

TEST_CASE("prototype generalization is permutation-equivariant over cells") {
    Model m = Model::init(tiny16(), 3);
    Rng rng(64);
    const int cells = 8 * 8, d = 16;
    Mat f = random_mat(rng, cells, d);
    Mat protos = random_mat(rng, 6, d);

    geco::ad::NoGradGuard ng;
    const Mat base = m.dqe_generalize(Var(f, false), Var(protos, false)).value();
    for (int trial = 0; trial < 20; ++trial) {
        const auto perm = random_perm(rng, cells);
        const Mat out_perm =
            m.dqe_generalize(Var(permute_rows(f, perm), false), Var(protos, false)).value();
        CAPTURE(trial);
        CHECK(max_abs_diff(out_perm, permute_rows(base, perm)) <= 1e-10);
    }
}

TEST_CASE("zero-shot prototype is invariant to cell permutations") {
    Model m = Model::init(tiny16(), 3);
    Rng rng(65);
    const int cells = 8 * 8, d = 16;
    Mat f = random_mat(rng, cells, d);

    geco::ad::NoGradGuard ng;
    geco::Encoded enc;
    enc.f_i = Var(f, false);
    enc.h = 8;
    enc.w = 8;
    const Mat base = m.build_prototypes(enc, nullptr, 128, 128).value();
    CHECK(base.rows() == 1);
    CHECK(base.cols() == d);
    for (int trial = 0; trial < 20; ++trial) {
        geco::Encoded penc;
        penc.f_i = Var(permute_rows(f, random_perm(rng, cells)), false);
        penc.h = 8;
        penc.w = 8;
        const Mat out = m.build_prototypes(penc, nullptr, 128, 128).value();
        CAPTURE(trial);
        CHECK(max_abs_diff(out, base) <= 1e-10);
    }
}

TEST_CASE("few-shot prototypes stack appearance over shape rows") {
    Model m = Model::init(tiny16(), 4);
    Rng rng(66);
    Mat img = random_mat(rng, 64 * 64, 3, 0.0, 1.0);
    geco::ad::NoGradGuard ng;
    auto enc = m.backbone_encode(img, 64, 64);
    std::vector<Box> ex = {{5, 5, 20, 22}, {30, 30, 45, 44}, {40, 8, 58, 25}};
    CHECK(m.build_prototypes(enc, &ex, 64, 64).rows() == size_t(6));
    std::vector<Box> one = {ex[0]};
    CHECK(m.build_prototypes(enc, &one, 64, 64).rows() == size_t(2));
    CHECK(m.build_prototypes(enc, &ex, 64, 64).cols() == size_t(16));
}

TEST_CASE("shape prototypes depend on box size only") {
    Model m = Model::init(tiny16(), 4);
    geco::ad::NoGradGuard ng;
    std::vector<Box> a = {{5, 5, 20, 22}};
    std::vector<Box> b = {{40, 30, 55, 47}};  // same 15x17 extent elsewhere
    const Mat pa = m.extract_shape_prototypes(a, 64, 64).value();
    const Mat pb = m.extract_shape_prototypes(b, 64, 64).value();
    CHECK(max_abs_diff(pa, pb) == 0.0);
    std::vector<Box> c = {{5, 5, 30, 22}};  // different width
    const Mat pc = m.extract_shape_prototypes(c, 64, 64).value();
    CHECK(max_abs_diff(pa, pc) > 0.0);
}

TEST_CASE("appearance pooling of a constant region returns that constant") {
    Model m = Model::init(tiny16(), 4);
    const int d = 16;
    geco::Encoded enc;
    Mat f(4 * 4, d);
    for (int r = 0; r < 16; ++r)
        for (int j = 0; j < d; ++j) f(r, j) = j * 0.25 - 1.0;
    enc.f_i = Var(f, false);
    enc.h = 4;
    enc.w = 4;
    geco::ad::NoGradGuard ng;
    // r=16: the box spans several feature cells of identical content
    std::vector<Box> ex = {{8, 8, 56, 56}};
    const Mat p = m.extract_appearance_prototypes(enc, ex, 64, 64).value();
    REQUIRE(p.rows() == 1);
    for (int j = 0; j < d; ++j) CHECK(p(0, j) == doctest::Approx(j * 0.25 - 1.0).epsilon(1e-12));
}

TEST_CASE("attention with a single key reduces to the value path") {
    Model m = Model::init(tiny16(), 5);
    const int d = 16;
    set_identity(m.params().at("dqe.p1.ca.wv").value());
    set_identity(m.params().at("dqe.p1.ca.wo").value());
    // biases are zero-initialized already
    Rng rng(67);
    Mat q = random_mat(rng, 5, d), kv = random_mat(rng, 1, d);
    geco::ad::NoGradGuard ng;
    const Mat out = m.attention("dqe.p1.ca", Var(q, false), Var(kv, false), Var(kv, false),
                                Mat(), Mat()).value();
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < d; ++j) {
            CAPTURE(i);
            CAPTURE(j);
            CHECK(out(i, j) == doctest::Approx(q(i, j) + kv(0, j)).epsilon(1e-13));
        }
}

TEST_CASE("attention with zero values is the identity on queries") {
    Model m = Model::init(tiny16(), 5);
    Rng rng(68);
    Mat q = random_mat(rng, 4, 16), k = random_mat(rng, 3, 16);
    Mat v(3, 16);  // zeros
    geco::ad::NoGradGuard ng;
    const Mat out =
        m.attention("dqe.q1.sa", Var(q, false), Var(k, false), Var(v, false), Mat(), Mat())
            .value();
    CHECK(max_abs_diff(out, q) <= 1e-14);
}

TEST_CASE("heads on zero queries: objectness 0, boxes 0.5") {
    Model m = Model::init(tiny16(), 6);
    Mat zero_q(10, 16);
    geco::ad::NoGradGuard ng;
    const Mat y_o = m.objectness_head(Var(zero_q, false)).value();
    for (size_t i = 0; i < y_o.numel(); ++i) CHECK(y_o[i] == 0.0);
    const Mat y_bb = m.box_head_rows(Var(zero_q, false)).value();
    CHECK(y_bb.cols() == 4);
    for (size_t i = 0; i < y_bb.numel(); ++i) CHECK(y_bb[i] == 0.5);
}

TEST_CASE("dense and gathered box-head evaluations agree bitwise") {
    Model m = Model::init(tiny16(), 7);
    Rng rng(69);
    Mat img = random_mat(rng, 64 * 64, 3, 0.0, 1.0);
    std::vector<Box> ex = {{5, 5, 20, 22}};
    geco::ad::NoGradGuard ng;
    auto fwd = m.forward(img, &ex, 64, 64);
    const Mat dense = m.box_head_rows(fwd.q_hr).value();
    std::vector<int> idx = {0, 17, 31, 17, 1023, 512};
    const Mat sparse = m.box_head_rows(geco::ad::gather_rows(fwd.q_hr, idx)).value();
    for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < 4; ++j) {
            CAPTURE(i);
            CHECK(sparse(static_cast<int>(i), j) == dense(idx[i], j));
        }
}

TEST_CASE("positional encoding is cached and crop-consistent") {
    Model m = Model::init(tiny16(), 8);
    const Mat& a = m.positional_encoding(3, 4);
    const Mat& b = m.positional_encoding(3, 4);
    CHECK(&a == &b);  // cached per shape
    const Mat& big = m.positional_encoding(6, 8);
    // a grid that is a crop of a larger canvas keeps identical codes
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            for (int j = 0; j < 16; ++j)
                CHECK(a(r * 4 + c, j) == big(r * 8 + c, j));
}

TEST_CASE("checkpoints round-trip bitwise") {
    const std::string dir = testutil::scratch_dir("ckpt");
    Model m = Model::init(tiny16(), 9);
    const std::string path = dir + "/model.ckpt";
    m.save_checkpoint(path);
    Model back = Model::load_checkpoint(path);
    CHECK(back.config().d == 16);
    CHECK(back.config().r == 16);
    REQUIRE(back.params().all().size() == m.params().all().size());
    for (const auto& [name, v] : m.params().all()) {
        const Mat& orig = v.value();
        const Mat& loaded = back.params().at(name).value();
        REQUIRE(orig.same_shape(loaded));
        for (size_t i = 0; i < orig.numel(); ++i) CHECK(orig[i] == loaded[i]);
    }
}

TEST_CASE("checkpoint loading fails loudly on corruption") {
    const std::string dir = testutil::scratch_dir("ckpt_bad");
    Model m = Model::init(tiny16(), 10);
    const std::string path = dir + "/model.ckpt";
    m.save_checkpoint(path);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(Model::load_checkpoint(dir + "/nope.ckpt"), geco::SchemaError);
    }
    SUBCASE("wrong magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
        f.close();
        CHECK_THROWS_AS(Model::load_checkpoint(path), geco::SchemaError);
    }
    SUBCASE("truncated payload") {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(Model::load_checkpoint(path), geco::SchemaError);
    }
}

TEST_CASE("loaded checkpoints reproduce forward outputs bitwise") {
    const std::string dir = testutil::scratch_dir("ckpt_fwd");
    Model m = Model::init(tiny16(), 11);
    const std::string path = dir + "/model.ckpt";
    m.save_checkpoint(path);
    Model back = Model::load_checkpoint(path);
    Rng rng(70);
    Mat img = random_mat(rng, 64 * 64, 3, 0.0, 1.0);
    std::vector<Box> ex = {{5, 5, 20, 22}};
    geco::ad::NoGradGuard ng;
    auto f1 = m.forward(img, &ex, 64, 64);
    auto f2 = back.forward(img, &ex, 64, 64);
    CHECK(max_abs_diff(f1.y_o.value(), f2.y_o.value()) == 0.0);
    CHECK(max_abs_diff(f1.q_hr.value(), f2.q_hr.value()) == 0.0);
}

TEST_CASE("stride-4 skip features flow into the unpacking stage") {
    // with r=16 the third unpacking stage consumes d + d_hq channels
    Model m = Model::init(tiny16(), 12);
    CHECK(m.params().at("dqd.s3.w").rows() == size_t(9 * (16 + 8)));
    CHECK(m.params().at("dqd.s1.w").rows() == size_t(9 * 16));
    // with r=4 there is s1 only and no skip concat
    ModelConfig c4 = tiny16();
    c4.r = 4;
    Model m4 = Model::init(c4, 12);
    CHECK(m4.params().has("dqd.s1.w"));
    CHECK(!m4.params().has("dqd.s2.w"));
    CHECK(m4.params().at("dqd.s1.w").rows() == size_t(9 * 16));
}

}  // TEST_SUITE
