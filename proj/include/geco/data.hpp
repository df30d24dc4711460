#pragma once

#include <string>
#include <vector>

#include "geco/geometry.hpp"
#include "geco/image.hpp"
#include "geco/rng.hpp"

namespace geco::data {

/// One counting scene: pixels (possibly not yet loaded for descriptors
/// parsed from an annotation file), target boxes, the exemplar subset, and
/// any distractor-class boxes.
struct Scene {
    std::string id;
    std::string file;  // image path relative to the dataset root
    int width = 0, height = 0;
    image::ImageU8 pixels;
    std::vector<Box> gt_boxes;
    std::vector<Box> exemplars;
    std::vector<Box> distractor_boxes;

    bool loaded() const { return !pixels.rgb.empty(); }
};

struct SynthConfig {
    int n_images = 1;
    int size = 128;        // square side, multiple of 16
    int max_objects = 12;  // target-class instances per scene: 1..max
    double distractor_rate = 0.3;  // probability a scene carries a second class
    int k = 3;                     // exemplars kept (first k target boxes)
};

struct SynthResult {
    std::vector<Scene> scenes;
    int placement_failures = 0;  // objects dropped after 1000 rejected placements
};

/// Renders colored shapes (discs, rectangles, elongated bars, two-blob
/// composites) on textured noise backgrounds. One shape kind + color per
/// scene for the target class; scenes may add a distractor class of a
/// different kind and color. Pairwise box IoU <= 0.3 by rejection
/// sampling. Every box extent satisfies (width+height)/2 >= 25 so the
/// inference resize policy always lands in its pad-to-1024 branch.
/// Deterministic per (config, seed).
SynthResult synth_generate(const SynthConfig& cfg, uint64_t seed);

/// Writes scenes as images/<id>.png plus an annotations.json file.
void save_dataset(const std::string& dir, const std::vector<Scene>& scenes);

/// Parses annotations.json (schema: {"version":1,"images":[{id,file,width,
/// height,boxes,exemplars,distractor_boxes?}]}) into descriptors without
/// pixels. Throws SchemaError with the offending field path.
std::vector<Scene> load_annotations(const std::string& path);

/// Reads the scene's PNG relative to the dataset root. Throws MissingImage.
void load_pixels(Scene& scene, const std::string& root);

/// load_annotations + load_pixels for every scene.
std::vector<Scene> load_dataset(const std::string& dir);

struct ResizeDecision {
    double scale_factor = 1.0;
    int canvas_w = 0, canvas_h = 0;
};

/// Inference-time sizing: with s = mean exemplar (width+height)/2, small
/// exemplars (s < 25) scale the long image side to 1536; otherwise the
/// image is scaled by min(1, 80/s) and zero-padded to a 1024x1024 canvas
/// (larger if the scaled image itself is larger). Canvas dimensions are
/// rounded up to a multiple of r.
ResizeDecision resize_policy(double mean_exemplar_extent, int image_w, int image_h, int r);
ResizeDecision resize_policy(const std::vector<Box>& exemplars, int image_w, int image_h,
                             int r);

double mean_extent(const std::vector<Box>& boxes);

}  // namespace geco::data
