#include "geco/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "geco/common.hpp"

namespace geco::data {

namespace {

enum Kind { kDisc = 0, kRect = 1, kBar = 2, kAnt = 3 };

struct Placed {
    Kind kind;
    Box box;
    double extent;  // (width+height)/2 by construction
    bool flip;
    double rgb[3];
};

// Every shape is sized so its tight box has (width+height)/2 == extent:
// disc w=h=e; rect w=a*e, h=(2-a)*e; bar 1.55e x 0.45e; two-blob 1.2e x 0.8e.
Box shape_box(Kind kind, double cx, double cy, double e, double aspect, bool flip) {
    double w = e, h = e;
    switch (kind) {
        case kDisc: break;
        case kRect:
            w = aspect * e;
            h = (2.0 - aspect) * e;
            break;
        case kBar:
            w = 1.55 * e;
            h = 0.45 * e;
            break;
        case kAnt:
            w = 1.2 * e;
            h = 0.8 * e;
            break;
    }
    if (flip) std::swap(w, h);
    return Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

bool inside_shape(const Placed& p, double x, double y) {
    const double cx = p.box.cx(), cy = p.box.cy();
    const double e = p.extent;
    double dx = x - cx, dy = y - cy;
    if (p.flip) std::swap(dx, dy);
    switch (p.kind) {
        case kDisc:
            return dx * dx + dy * dy <= (e / 2) * (e / 2);
        case kRect:
        case kBar:
            return x >= p.box.x1 && x < p.box.x2 && y >= p.box.y1 && y < p.box.y2;
        case kAnt: {
            const double r = 0.4 * e;
            const double off = 0.2 * e;
            const double d1 = (dx - off) * (dx - off) + dy * dy;
            const double d2 = (dx + off) * (dx + off) + dy * dy;
            return d1 <= r * r || d2 <= r * r;
        }
    }
    return false;
}

void render_shape(image::ImageU8& img, std::vector<double>& buf, const Placed& p) {
    const int x0 = std::max(0, static_cast<int>(std::floor(p.box.x1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(p.box.y1)));
    const int x1 = std::min(img.width, static_cast<int>(std::ceil(p.box.x2)));
    const int y1 = std::min(img.height, static_cast<int>(std::ceil(p.box.y2)));
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            int hits = 0;
            for (const double oy : {0.25, 0.75})
                for (const double ox : {0.25, 0.75})
                    hits += inside_shape(p, x + ox, y + oy) ? 1 : 0;
            if (hits == 0) continue;
            const double a = hits / 4.0;
            double* px = buf.data() + (static_cast<size_t>(y) * img.width + x) * 3;
            for (int c = 0; c < 3; ++c) px[c] = px[c] * (1 - a) + p.rgb[c] * a;
        }
    }
}

void sample_color(Rng& rng, double out[3]) {
    // Bright, saturated: at least one strong channel and a wide spread.
    for (int tries = 0; tries < 100; ++tries) {
        for (int c = 0; c < 3; ++c) out[c] = rng.uniform();
        const double mx = std::max({out[0], out[1], out[2]});
        const double mn = std::min({out[0], out[1], out[2]});
        if (mx >= 0.7 && mx - mn >= 0.4) return;
    }
    out[0] = 0.9;
    out[1] = 0.2;
    out[2] = 0.2;
}

void sample_distinct_color(Rng& rng, const double base[3], double out[3]) {
    for (int tries = 0; tries < 100; ++tries) {
        sample_color(rng, out);
        const double d = std::fabs(out[0] - base[0]) + std::fabs(out[1] - base[1]) +
                         std::fabs(out[2] - base[2]);
        if (d >= 0.75) return;
    }
    for (int c = 0; c < 3; ++c) out[c] = 1.0 - base[c];
}

void textured_background(Rng& rng, int size, std::vector<double>& buf) {
    const int cell = 16;
    const int gw = size / cell + 2;
    std::vector<double> nodes(static_cast<size_t>(gw) * gw * 3);
    for (double& v : nodes) v = rng.uniform(0.25, 0.65);
    for (int y = 0; y < size; ++y) {
        const double fy = static_cast<double>(y) / cell;
        const int gy = static_cast<int>(fy);
        const double wy = fy - gy;
        for (int x = 0; x < size; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const int gx = static_cast<int>(fx);
            const double wx = fx - gx;
            double* px = buf.data() + (static_cast<size_t>(y) * size + x) * 3;
            for (int c = 0; c < 3; ++c) {
                const double n00 = nodes[(static_cast<size_t>(gy) * gw + gx) * 3 + c];
                const double n01 = nodes[(static_cast<size_t>(gy) * gw + gx + 1) * 3 + c];
                const double n10 = nodes[(static_cast<size_t>(gy + 1) * gw + gx) * 3 + c];
                const double n11 = nodes[(static_cast<size_t>(gy + 1) * gw + gx + 1) * 3 + c];
                const double top = n00 + (n01 - n00) * wx;
                const double bot = n10 + (n11 - n10) * wx;
                px[c] = std::clamp(top + (bot - top) * wy + rng.uniform(-0.02, 0.02), 0.0, 1.0);
            }
        }
    }
}

/// Places one shape with pairwise IoU <= 0.3 against everything placed so
/// far. Returns false after 1000 rejected attempts.
bool place_shape(Rng& rng, int size, Kind kind, const double rgb[3],
                 std::vector<Placed>& placed) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double e = rng.uniform(28.0, 44.0);
        const double aspect = rng.uniform(0.75, 1.25);
        const bool flip = rng.bernoulli(0.5);
        Box probe = shape_box(kind, 0, 0, e, aspect, flip);
        const double w = probe.width(), h = probe.height();
        if (w + 2 >= size || h + 2 >= size) continue;
        const double cx = rng.uniform(w / 2 + 1, size - w / 2 - 1);
        const double cy = rng.uniform(h / 2 + 1, size - h / 2 - 1);
        Box box = shape_box(kind, cx, cy, e, aspect, flip);
        bool ok = true;
        for (const Placed& q : placed) {
            if (geometry::iou(box, q.box) > 0.3) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        Placed p;
        p.kind = kind;
        p.box = box;
        p.extent = e;
        p.flip = flip;
        const double brightness = rng.uniform(0.9, 1.1);
        for (int c = 0; c < 3; ++c) p.rgb[c] = std::clamp(rgb[c] * brightness, 0.0, 1.0);
        placed.push_back(p);
        return true;
    }
    return false;
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg, uint64_t seed) {
    GECO_CHECK(cfg.n_images >= 1, "need at least one image");
    GECO_CHECK(cfg.size >= 64 && cfg.size % 16 == 0, "size must be a multiple of 16, >= 64");
    GECO_CHECK(cfg.max_objects >= 1, "max_objects must be >= 1");
    GECO_CHECK(cfg.distractor_rate >= 0 && cfg.distractor_rate <= 1,
               "distractor_rate must lie in [0,1]");

    SynthResult out;
    out.scenes.reserve(cfg.n_images);
    for (int idx = 0; idx < cfg.n_images; ++idx) {
        Rng rng = Rng::derived(seed, static_cast<uint64_t>(idx) + 1);
        Scene s;
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%06d", idx);
        s.id = name;
        s.file = "images/" + s.id + ".png";
        s.width = s.height = cfg.size;

        std::vector<double> buf(static_cast<size_t>(cfg.size) * cfg.size * 3);
        textured_background(rng, cfg.size, buf);

        const Kind target_kind = static_cast<Kind>(rng.uniform_int(0, 3));
        double target_rgb[3];
        sample_color(rng, target_rgb);
        const int want_targets = rng.uniform_int(1, cfg.max_objects);
        const bool with_distractors = rng.bernoulli(cfg.distractor_rate);
        const int want_distractors =
            with_distractors ? rng.uniform_int(1, std::max(1, cfg.max_objects / 2)) : 0;
        Kind distractor_kind = target_kind;
        double distractor_rgb[3] = {0, 0, 0};
        if (want_distractors > 0) {
            distractor_kind = static_cast<Kind>((static_cast<int>(target_kind) + 1 +
                                                 rng.uniform_int(0, 2)) %
                                                4);
            sample_distinct_color(rng, target_rgb, distractor_rgb);
        }

        std::vector<Placed> placed;
        int n_targets = 0;
        for (int i = 0; i < want_targets; ++i) {
            if (place_shape(rng, cfg.size, target_kind, target_rgb, placed))
                ++n_targets;
            else
                ++out.placement_failures;
        }
        for (int i = 0; i < want_distractors; ++i)
            if (!place_shape(rng, cfg.size, distractor_kind, distractor_rgb, placed))
                ++out.placement_failures;

        image::ImageU8 img(cfg.size, cfg.size);
        for (const Placed& p : placed) render_shape(img, buf, p);
        for (size_t i = 0; i < buf.size(); ++i)
            img.rgb[i] = static_cast<uint8_t>(std::clamp(std::lround(buf[i] * 255.0), 0l, 255l));
        s.pixels = std::move(img);

        for (int i = 0; i < static_cast<int>(placed.size()); ++i) {
            if (i < n_targets)
                s.gt_boxes.push_back(placed[i].box);
            else
                s.distractor_boxes.push_back(placed[i].box);
        }
        const int k = std::min(cfg.k, static_cast<int>(s.gt_boxes.size()));
        s.exemplars.assign(s.gt_boxes.begin(), s.gt_boxes.begin() + k);
        out.scenes.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Annotation files

namespace {

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

Box parse_box(const nlohmann::json& j, const std::string& where, const std::string& image_id,
              int width, int height) {
    if (!j.is_array() || j.size() != 4 || !j[0].is_number() || !j[1].is_number() ||
        !j[2].is_number() || !j[3].is_number())
        throw SchemaError(where, "box must be [x1,y1,x2,y2] (id=" + image_id + ")");
    Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (b.x2 <= b.x1 || b.y2 <= b.y1)
        throw SchemaError(where, "degenerate box, needs x2 > x1 and y2 > y1 (id=" + image_id +
                                     ")");
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > width || b.y2 > height)
        throw SchemaError(where, "box out of image bounds (id=" + image_id + ")");
    return b;
}

}  // namespace

void save_dataset(const std::string& dir, const std::vector<Scene>& scenes) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    nlohmann::json images = nlohmann::json::array();
    for (const Scene& s : scenes) {
        GECO_CHECK(s.loaded(), "scene " + s.id + " has no pixels to save");
        image::write_png((fs::path(dir) / s.file).string(), s.pixels);
        nlohmann::json e;
        e["id"] = s.id;
        e["file"] = s.file;
        e["width"] = s.width;
        e["height"] = s.height;
        e["boxes"] = nlohmann::json::array();
        for (const Box& b : s.gt_boxes) e["boxes"].push_back(box_json(b));
        e["exemplars"] = nlohmann::json::array();
        for (const Box& b : s.exemplars) e["exemplars"].push_back(box_json(b));
        if (!s.distractor_boxes.empty()) {
            e["distractor_boxes"] = nlohmann::json::array();
            for (const Box& b : s.distractor_boxes) e["distractor_boxes"].push_back(box_json(b));
        }
        images.push_back(std::move(e));
    }
    nlohmann::json root;
    root["version"] = 1;
    root["images"] = std::move(images);
    std::ofstream f(std::filesystem::path(dir) / "annotations.json",
                    std::ios::binary | std::ios::trunc);
    GECO_CHECK(f.good(), "cannot write annotations in " + dir);
    f << root.dump(2) << "\n";
}

std::vector<Scene> load_annotations(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw SchemaError(path, "cannot open annotation file");
    nlohmann::json root;
    try {
        f >> root;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path, std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object() || root.value("version", 0) != 1)
        throw SchemaError("version", "expected annotation schema version 1");
    if (!root.contains("images") || !root["images"].is_array())
        throw SchemaError("images", "missing images array");

    std::vector<Scene> scenes;
    const auto& images = root["images"];
    for (size_t i = 0; i < images.size(); ++i) {
        const std::string where = "images[" + std::to_string(i) + "]";
        const auto& e = images[i];
        if (!e.is_object()) throw SchemaError(where, "image entry must be an object");
        Scene s;
        if (!e.contains("id") || !e["id"].is_string())
            throw SchemaError(where + ".id", "missing string id");
        s.id = e["id"].get<std::string>();
        if (!e.contains("file") || !e["file"].is_string())
            throw SchemaError(where + ".file", "missing file path (id=" + s.id + ")");
        s.file = e["file"].get<std::string>();
        if (!e.contains("width") || !e["width"].is_number_integer() ||
            e["width"].get<int>() <= 0)
            throw SchemaError(where + ".width", "bad width (id=" + s.id + ")");
        if (!e.contains("height") || !e["height"].is_number_integer() ||
            e["height"].get<int>() <= 0)
            throw SchemaError(where + ".height", "bad height (id=" + s.id + ")");
        s.width = e["width"].get<int>();
        s.height = e["height"].get<int>();
        if (!e.contains("boxes") || !e["boxes"].is_array())
            throw SchemaError(where + ".boxes", "missing boxes array (id=" + s.id + ")");
        if (!e.contains("exemplars") || !e["exemplars"].is_array())
            throw SchemaError(where + ".exemplars", "missing exemplars array (id=" + s.id + ")");
        for (size_t j = 0; j < e["boxes"].size(); ++j)
            s.gt_boxes.push_back(parse_box(e["boxes"][j],
                                           where + ".boxes[" + std::to_string(j) + "]", s.id,
                                           s.width, s.height));
        for (size_t j = 0; j < e["exemplars"].size(); ++j)
            s.exemplars.push_back(parse_box(e["exemplars"][j],
                                            where + ".exemplars[" + std::to_string(j) + "]",
                                            s.id, s.width, s.height));
        if (e.contains("distractor_boxes")) {
            if (!e["distractor_boxes"].is_array())
                throw SchemaError(where + ".distractor_boxes",
                                  "must be an array (id=" + s.id + ")");
            for (size_t j = 0; j < e["distractor_boxes"].size(); ++j)
                s.distractor_boxes.push_back(
                    parse_box(e["distractor_boxes"][j],
                              where + ".distractor_boxes[" + std::to_string(j) + "]", s.id,
                              s.width, s.height));
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

void load_pixels(Scene& scene, const std::string& root) {
    const std::string path = (std::filesystem::path(root) / scene.file).string();
    scene.pixels = image::read_png(path);
    if (scene.pixels.width != scene.width || scene.pixels.height != scene.height)
        throw SchemaError(scene.id, "image size " + std::to_string(scene.pixels.width) + "x" +
                                        std::to_string(scene.pixels.height) +
                                        " does not match annotation " +
                                        std::to_string(scene.width) + "x" +
                                        std::to_string(scene.height));
}

std::vector<Scene> load_dataset(const std::string& dir) {
    std::vector<Scene> scenes =
        load_annotations((std::filesystem::path(dir) / "annotations.json").string());
    for (Scene& s : scenes) load_pixels(s, dir);
    return scenes;
}

// ---------------------------------------------------------------------------
// Resize policy

double mean_extent(const std::vector<Box>& boxes) {
    GECO_CHECK(!boxes.empty(), "mean_extent needs at least one box");
    double s = 0;
    for (const Box& b : boxes) s += (b.width() + b.height()) / 2.0;
    return s / static_cast<double>(boxes.size());
}

ResizeDecision resize_policy(double mean_exemplar_extent, int image_w, int image_h, int r) {
    GECO_CHECK(mean_exemplar_extent > 0, "exemplar extent must be positive");
    GECO_CHECK(image_w > 0 && image_h > 0 && r > 0, "bad resize inputs");
    auto round_up = [r](int v) { return (v + r - 1) / r * r; };

    ResizeDecision d;
    if (mean_exemplar_extent < 25.0) {
        d.scale_factor = 1536.0 / std::max(image_w, image_h);
        d.canvas_w = round_up(static_cast<int>(std::lround(image_w * d.scale_factor)));
        d.canvas_h = round_up(static_cast<int>(std::lround(image_h * d.scale_factor)));
    } else {
        d.scale_factor = std::min(1.0, 80.0 / mean_exemplar_extent);
        const int sw = static_cast<int>(std::lround(image_w * d.scale_factor));
        const int sh = static_cast<int>(std::lround(image_h * d.scale_factor));
        d.canvas_w = std::max(1024, round_up(sw));
        d.canvas_h = std::max(1024, round_up(sh));
    }
    return d;
}

ResizeDecision resize_policy(const std::vector<Box>& exemplars, int image_w, int image_h,
                             int r) {
    return resize_policy(mean_extent(exemplars), image_w, image_h, r);
}

}  // namespace geco::data
