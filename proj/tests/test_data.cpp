#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "geco/data.hpp"
#include "geco/geometry.hpp"
#include "geco/image.hpp"
#include "geco/rng.hpp"
#include "test_util.hpp"

using geco::Box;
using geco::Rng;
using geco::data::ResizeDecision;
using geco::data::Scene;
using geco::data::SynthConfig;
using geco::data::SynthResult;

namespace {

bool same_box(const Box& a, const Box& b) {
    return a.x1 == b.x1 && a.y1 == b.y1 && a.x2 == b.x2 && a.y2 == b.y2;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    REQUIRE(f.good());
    f << text;
}

std::vector<Box> all_boxes(const Scene& s) {
    std::vector<Box> out = s.gt_boxes;
    out.insert(out.end(), s.distractor_boxes.begin(), s.distractor_boxes.end());
    return out;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("synthetic scenes are reproducible per seed") {
    SynthConfig cfg;
    cfg.n_images = 3;
    cfg.size = 128;
    cfg.max_objects = 6;
    cfg.distractor_rate = 0.5;
    const SynthResult a = geco::data::synth_generate(cfg, 11);
    const SynthResult b = geco::data::synth_generate(cfg, 11);
    REQUIRE(a.scenes.size() == 3);
    REQUIRE(b.scenes.size() == 3);
    CHECK(a.placement_failures == b.placement_failures);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(a.scenes[i].id == b.scenes[i].id);
        REQUIRE(a.scenes[i].gt_boxes.size() == b.scenes[i].gt_boxes.size());
        for (size_t j = 0; j < a.scenes[i].gt_boxes.size(); ++j)
            CHECK(same_box(a.scenes[i].gt_boxes[j], b.scenes[i].gt_boxes[j]));
        CHECK(a.scenes[i].pixels.rgb == b.scenes[i].pixels.rgb);
    }

    const SynthResult c = geco::data::synth_generate(cfg, 12);
    bool differs = false;
    for (size_t i = 0; i < 3 && !differs; ++i)
        differs = a.scenes[i].pixels.rgb != c.scenes[i].pixels.rgb ||
                  a.scenes[i].gt_boxes.size() != c.scenes[i].gt_boxes.size();
    CHECK(differs);
}

TEST_CASE("synthetic scenes satisfy the documented geometry invariants") {
    SynthConfig cfg;
    cfg.n_images = 12;
    cfg.size = 256;
    cfg.max_objects = 10;
    cfg.distractor_rate = 0.5;
    cfg.k = 3;
    const SynthResult res = geco::data::synth_generate(cfg, 7);
    REQUIRE(res.scenes.size() == 12);

    bool saw_distractors = false, saw_clean = false;
    for (const Scene& s : res.scenes) {
        CAPTURE(s.id);
        CHECK(s.loaded());
        CHECK(s.width == 256);
        CHECK(s.height == 256);
        CHECK(s.pixels.width == 256);
        CHECK(s.pixels.height == 256);
        REQUIRE(!s.gt_boxes.empty());
        CHECK(int(s.gt_boxes.size()) <= 10);

        // exemplars are the first k target boxes
        REQUIRE(s.exemplars.size() == std::min<size_t>(3, s.gt_boxes.size()));
        for (size_t i = 0; i < s.exemplars.size(); ++i)
            CHECK(same_box(s.exemplars[i], s.gt_boxes[i]));

        const std::vector<Box> boxes = all_boxes(s);
        for (const Box& b : boxes) {
            CHECK(b.x1 >= 0.0);
            CHECK(b.y1 >= 0.0);
            CHECK(b.x2 <= 256.0);
            CHECK(b.y2 <= 256.0);
            CHECK(b.x2 > b.x1);
            CHECK(b.y2 > b.y1);
            // extents keep the inference resize policy in its pad branch
            CHECK((b.width() + b.height()) / 2.0 >= 25.0);
        }
        for (size_t i = 0; i < boxes.size(); ++i)
            for (size_t j = i + 1; j < boxes.size(); ++j)
                CHECK(geco::geometry::iou(boxes[i], boxes[j]) <= 0.3 + 1e-9);
        for (const Box& d : s.distractor_boxes)
            for (const Box& g : s.gt_boxes) CHECK(!same_box(d, g));

        saw_distractors = saw_distractors || !s.distractor_boxes.empty();
        saw_clean = saw_clean || s.distractor_boxes.empty();
    }
    CHECK(saw_distractors);
    CHECK(saw_clean);
}

TEST_CASE("distractor rate zero and one hit both extremes") {
    SynthConfig cfg;
    cfg.n_images = 6;
    cfg.size = 256;
    cfg.max_objects = 4;
    cfg.distractor_rate = 0.0;
    for (const Scene& s : geco::data::synth_generate(cfg, 13).scenes)
        CHECK(s.distractor_boxes.empty());
    cfg.distractor_rate = 1.0;
    for (const Scene& s : geco::data::synth_generate(cfg, 13).scenes)
        CHECK(!s.distractor_boxes.empty());
}

TEST_CASE("impossible object counts are reported as placement failures") {
    SynthConfig cfg;
    cfg.n_images = 4;
    cfg.size = 128;
    cfg.max_objects = 150;
    cfg.distractor_rate = 0.0;
    const SynthResult res = geco::data::synth_generate(cfg, 14);
    CHECK(res.placement_failures > 0);
    for (const Scene& s : res.scenes) {
        CHECK(!s.gt_boxes.empty());
        CHECK(int(s.gt_boxes.size()) < 150);
        const std::vector<Box> boxes = all_boxes(s);
        for (size_t i = 0; i < boxes.size(); ++i)
            for (size_t j = i + 1; j < boxes.size(); ++j)
                CHECK(geco::geometry::iou(boxes[i], boxes[j]) <= 0.3 + 1e-9);
    }
}

TEST_CASE("datasets survive a save and load round trip unchanged") {
    SynthConfig cfg;
    cfg.n_images = 3;
    cfg.size = 128;
    cfg.max_objects = 5;
    cfg.distractor_rate = 1.0;  // exercise the optional annotation field
    const SynthResult res = geco::data::synth_generate(cfg, 15);
    const std::string dir = testutil::scratch_dir("ds_rt");
    geco::data::save_dataset(dir, res.scenes);

    const std::vector<Scene> loaded = geco::data::load_dataset(dir);
    REQUIRE(loaded.size() == res.scenes.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        const Scene& a = res.scenes[i];
        const Scene& b = loaded[i];
        CHECK(b.id == a.id);
        CHECK(b.file == a.file);
        CHECK(b.width == a.width);
        CHECK(b.height == a.height);
        REQUIRE(b.gt_boxes.size() == a.gt_boxes.size());
        for (size_t j = 0; j < a.gt_boxes.size(); ++j)
            CHECK(same_box(b.gt_boxes[j], a.gt_boxes[j]));  // exact: json round-trips doubles
        REQUIRE(b.exemplars.size() == a.exemplars.size());
        for (size_t j = 0; j < a.exemplars.size(); ++j)
            CHECK(same_box(b.exemplars[j], a.exemplars[j]));
        REQUIRE(b.distractor_boxes.size() == a.distractor_boxes.size());
        for (size_t j = 0; j < a.distractor_boxes.size(); ++j)
            CHECK(same_box(b.distractor_boxes[j], a.distractor_boxes[j]));
        CHECK(b.pixels.rgb == a.pixels.rgb);  // lossless image round trip
    }

    // annotations alone parse into descriptors without pixels
    const std::vector<Scene> descs = geco::data::load_annotations(dir + "/annotations.json");
    REQUIRE(descs.size() == res.scenes.size());
    CHECK(!descs[0].loaded());
    CHECK(descs[0].gt_boxes.size() == res.scenes[0].gt_boxes.size());
}

TEST_CASE("annotation schema violations fail loudly with a field path") {
    const std::string dir = testutil::scratch_dir("ds_bad");
    const std::string path = dir + "/annotations.json";

    SUBCASE("unreadable file") {
        CHECK_THROWS_AS(geco::data::load_annotations(dir + "/nope.json"), geco::SchemaError);
    }
    SUBCASE("not json") {
        write_file(path, "definitely not json");
        CHECK_THROWS_AS(geco::data::load_annotations(path), geco::SchemaError);
    }
    SUBCASE("wrong version") {
        write_file(path, R"({"version":2,"images":[]})");
        CHECK_THROWS_AS(geco::data::load_annotations(path), geco::SchemaError);
    }
    SUBCASE("missing images array") {
        write_file(path, R"({"version":1})");
        CHECK_THROWS_AS(geco::data::load_annotations(path), geco::SchemaError);
    }
    SUBCASE("missing id") {
        write_file(path, R"({"version":1,"images":[{"file":"images/x.png","width":64,)"
                         R"("height":64,"boxes":[],"exemplars":[]}]})");
        try {
            geco::data::load_annotations(path);
            FAIL("expected SchemaError");
        } catch (const geco::SchemaError& e) {
            CHECK(e.where.find("images[0].id") != std::string::npos);
        }
    }
    SUBCASE("degenerate box names the image") {
        write_file(path, R"({"version":1,"images":[{"id":"s7","file":"images/s7.png",)"
                         R"("width":64,"height":64,"boxes":[[10,10,10,20]],"exemplars":[]}]})");
        try {
            geco::data::load_annotations(path);
            FAIL("expected SchemaError");
        } catch (const geco::SchemaError& e) {
            CHECK(e.where.find("boxes[0]") != std::string::npos);
            CHECK(std::string(e.what()).find("s7") != std::string::npos);
        }
    }
    SUBCASE("box out of bounds") {
        write_file(path, R"({"version":1,"images":[{"id":"s8","file":"images/s8.png",)"
                         R"("width":64,"height":64,"boxes":[[10,10,70,20]],"exemplars":[]}]})");
        CHECK_THROWS_AS(geco::data::load_annotations(path), geco::SchemaError);
    }
    SUBCASE("malformed box shape") {
        write_file(path, R"({"version":1,"images":[{"id":"s9","file":"images/s9.png",)"
                         R"("width":64,"height":64,"boxes":[[10,10,20]],"exemplars":[]}]})");
        CHECK_THROWS_AS(geco::data::load_annotations(path), geco::SchemaError);
    }
}

TEST_CASE("missing or mismatched pixels are reported per scene") {
    const std::string dir = testutil::scratch_dir("ds_px");
    write_file(dir + "/annotations.json",
               R"({"version":1,"images":[{"id":"g0","file":"images/ghost.png","width":64,)"
               R"("height":64,"boxes":[[1,1,30,30]],"exemplars":[[1,1,30,30]]}]})");
    std::vector<Scene> scenes = geco::data::load_annotations(dir + "/annotations.json");
    REQUIRE(scenes.size() == 1);
    CHECK_THROWS_AS(geco::data::load_pixels(scenes[0], dir), geco::MissingImage);

    // a real file of the wrong size is a schema problem, not a missing one
    std::filesystem::create_directories(dir + "/images");
    geco::image::write_png(dir + "/images/ghost.png", geco::image::ImageU8(32, 32));
    CHECK_THROWS_AS(geco::data::load_pixels(scenes[0], dir), geco::SchemaError);
}

TEST_CASE("resize policy on worked examples") {
    // small exemplars: the long side goes to 1536
    ResizeDecision d = geco::data::resize_policy(20.0, 512, 512, 16);
    CHECK(d.scale_factor == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(d.canvas_w == 1536);
    CHECK(d.canvas_h == 1536);
    d = geco::data::resize_policy(20.0, 512, 256, 16);
    CHECK(d.scale_factor == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(d.canvas_w == 1536);
    CHECK(d.canvas_h == 768);

    // large exemplars shrink toward an 80px extent on a 1024 canvas
    d = geco::data::resize_policy(100.0, 1280, 1024, 16);
    CHECK(d.scale_factor == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(d.canvas_w == 1024);
    CHECK(d.canvas_h == 1024);

    // the boundary extent takes the pad branch and never upscales
    d = geco::data::resize_policy(25.0, 800, 600, 16);
    CHECK(d.scale_factor == 1.0);
    CHECK(d.canvas_w == 1024);
    CHECK(d.canvas_h == 1024);

    // oversized images enlarge the canvas, rounded up to the stride
    d = geco::data::resize_policy(30.0, 1300, 700, 32);
    CHECK(d.scale_factor == 1.0);
    CHECK(d.canvas_w == 1312);
    CHECK(d.canvas_h == 1024);

    d = geco::data::resize_policy(160.0, 4000, 200, 16);
    CHECK(d.scale_factor == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.canvas_w == 2000);
    CHECK(d.canvas_h == 1024);

    // the exemplar-list overload derives the mean extent itself
    const std::vector<Box> ex = {{0, 0, 30, 10}};  // extent 20
    const ResizeDecision d2 = geco::data::resize_policy(ex, 512, 512, 16);
    CHECK(d2.scale_factor == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(d2.canvas_w == 1536);
}

TEST_CASE("resize policy properties over random inputs") {
    Rng rng(210);
    const int strides[4] = {4, 8, 16, 32};
    for (int trial = 0; trial < 300; ++trial) {
        CAPTURE(trial);
        const double s = rng.uniform(5.0, 200.0);
        const int w = rng.uniform_int(64, 2000);
        const int h = rng.uniform_int(64, 2000);
        const int r = strides[rng.uniform_int(0, 3)];
        const ResizeDecision d = geco::data::resize_policy(s, w, h, r);
        CHECK(d.canvas_w % r == 0);
        CHECK(d.canvas_h % r == 0);
        CHECK(d.scale_factor > 0.0);
        if (s < 25.0) {
            // long side of the scaled image is 1536 (already stride-aligned)
            CHECK(std::max(d.canvas_w, d.canvas_h) == 1536);
            CHECK(d.scale_factor == doctest::Approx(1536.0 / std::max(w, h)).epsilon(1e-12));
        } else {
            CHECK(d.scale_factor == doctest::Approx(std::min(1.0, 80.0 / s)).epsilon(1e-12));
            CHECK(d.canvas_w >= 1024);
            CHECK(d.canvas_h >= 1024);
            // scaled extent: objects land at their native size, capped at 80
            CHECK(s * d.scale_factor == doctest::Approx(std::min(s, 80.0)).epsilon(1e-12));
        }
        CHECK(d.canvas_w >= int(std::floor(w * d.scale_factor)) - r);
        CHECK(d.canvas_h >= int(std::floor(h * d.scale_factor)) - r);
    }
}

TEST_CASE("mean extent averages half-perimeters and rejects empty input") {
    CHECK(geco::data::mean_extent({{0, 0, 10, 6}}) == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(geco::data::mean_extent({{0, 0, 10, 6}, {0, 0, 30, 18}}) ==
          doctest::Approx(16.0).epsilon(1e-12));
    CHECK_THROWS_AS(geco::data::mean_extent({}), geco::ShapeError);
}

}  // TEST_SUITE
