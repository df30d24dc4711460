#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "geco/data.hpp"
#include "geco/image.hpp"
#include "geco/metrics.hpp"
#include "geco/model.hpp"
#include "geco/pipeline.hpp"

namespace {

using namespace geco;

pipeline::PipelineConfig load_config(const std::string& path, uint64_t seed_override,
                                     bool has_seed) {
    pipeline::PipelineConfig cfg;
    if (!path.empty()) cfg = pipeline::PipelineConfig::from_json_file(path);
    if (has_seed) cfg.seed = seed_override;
    return cfg;
}

std::vector<Box> parse_exemplars(const std::string& text) {
    std::vector<Box> out;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find(';', pos);
        if (end == std::string::npos) end = text.size();
        const std::string part = text.substr(pos, end - pos);
        if (!part.empty()) {
            double v[4];
            int n = 0;
            size_t p = 0;
            while (n < 4 && p < part.size()) {
                size_t c = part.find(',', p);
                if (c == std::string::npos) c = part.size();
                v[n++] = std::stod(part.substr(p, c - p));
                p = c + 1;
            }
            if (n != 4) throw SchemaError("--exemplars", "expected x1,y1,x2,y2 groups");
            out.push_back(Box{v[0], v[1], v[2], v[3]});
            out.back().check();
        }
        pos = end + 1;
    }
    return out;
}

/// Deterministic 90/10 split when no separate validation directory is given.
void split_dataset(std::vector<data::Scene> all, std::vector<data::Scene>& train,
                   std::vector<data::Scene>& val) {
    const size_t n_val = std::max<size_t>(1, all.size() / 10);
    const size_t n_train = all.size() - n_val;
    train.assign(std::make_move_iterator(all.begin()),
                 std::make_move_iterator(all.begin() + n_train));
    val.assign(std::make_move_iterator(all.begin() + n_train),
               std::make_move_iterator(all.end()));
}

int run_synth(const std::string& out_dir, int n, int size, int max_objects, double distractors,
              uint64_t seed) {
    data::SynthConfig sc;
    sc.n_images = n;
    sc.size = size;
    sc.max_objects = max_objects;
    sc.distractor_rate = distractors;
    data::SynthResult res = data::synth_generate(sc, seed);
    data::save_dataset(out_dir, res.scenes);
    std::cout << "wrote " << res.scenes.size() << " scenes to " << out_dir;
    if (res.placement_failures > 0)
        std::cout << " (" << res.placement_failures << " placements dropped)";
    std::cout << "\n";
    return 0;
}

int run_train(const std::string& data_dir, const std::string& val_dir, const std::string& out,
              const std::string& config_path, int pretrain_epochs, int epochs, uint64_t seed,
              bool has_seed, const std::string& log_path) {
    pipeline::PipelineConfig cfg = load_config(config_path, seed, has_seed);
    std::vector<data::Scene> train, val;
    if (val_dir.empty()) {
        split_dataset(data::load_dataset(data_dir), train, val);
    } else {
        train = data::load_dataset(data_dir);
        val = data::load_dataset(val_dir);
    }
    std::ofstream log(log_path.empty() ? out + ".train.jsonl" : log_path,
                      std::ios::binary | std::ios::trunc);
    pipeline::FitOptions opt;
    opt.pretrain_epochs = pretrain_epochs;
    opt.epochs = epochs;
    pipeline::FitResult fr = pipeline::fit(train, val, cfg, opt, &log);
    fr.model.save_checkpoint(out);
    std::cout << "trained " << fr.steps << " steps; best epoch " << fr.best_epoch
              << "; checkpoint " << out << "\n";
    return 0;
}

int run_train_zero_shot(const std::string& ckpt, const std::string& data_dir,
                        const std::string& out, const std::string& config_path, int epochs,
                        const std::string& log_path) {
    pipeline::PipelineConfig cfg = load_config(config_path, 0, false);
    Model model = Model::load_checkpoint(ckpt);
    std::vector<data::Scene> train = data::load_dataset(data_dir);
    std::ofstream log(log_path.empty() ? out + ".train.jsonl" : log_path,
                      std::ios::binary | std::ios::trunc);
    pipeline::fit_zero_shot(model, train, cfg, epochs, &log);
    model.save_checkpoint(out);
    std::cout << "zero-shot prototype trained; checkpoint " << out << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& mode,
             const std::string& report_path, const std::string& config_path) {
    pipeline::PipelineConfig cfg = load_config(config_path, 0, false);
    Model model = Model::load_checkpoint(ckpt);
    std::vector<data::Scene> scenes = data::load_dataset(data_dir);
    pipeline::EvalMode m;
    if (mode == "few")
        m = pipeline::EvalMode::Few;
    else if (mode == "one")
        m = pipeline::EvalMode::One;
    else if (mode == "zero")
        m = pipeline::EvalMode::Zero;
    else
        throw SchemaError("--mode", "expected few, one, or zero");
    const EvalReport report = pipeline::evaluate_dataset(model, scenes, cfg, m);
    const std::string text = report.to_json();
    if (!report_path.empty()) {
        std::ofstream f(report_path, std::ios::binary | std::ios::trunc);
        GECO_CHECK(f.good(), "cannot write report: " + report_path);
        f << text << "\n";
    }
    std::cout << text << "\n";
    return 0;
}

int run_infer(const std::string& ckpt, const std::string& image_path,
              const std::string& exemplar_text, bool zero_shot, const std::string& overlay_path,
              const std::string& json_path, const std::string& config_path) {
    pipeline::PipelineConfig cfg = load_config(config_path, 0, false);
    Model model = Model::load_checkpoint(ckpt);
    const image::ImageU8 img = image::read_png(image_path);

    std::vector<Box> exemplars;
    if (!exemplar_text.empty()) exemplars = parse_exemplars(exemplar_text);

    pipeline::InferenceResult res;
    if (zero_shot) {
        res = pipeline::infer_zero_shot_two_pass(model, img, cfg);
    } else {
        if (exemplars.empty())
            throw SchemaError("--exemplars", "required unless --zero-shot is given");
        res = pipeline::infer(model, img, &exemplars, cfg);
    }

    std::cout << "count: " << res.count << "\n";
    for (const ScoredBox& d : res.boxes)
        std::cout << d.box.x1 << "," << d.box.y1 << "," << d.box.x2 << "," << d.box.y2
                  << " score " << d.score << "\n";

    if (!json_path.empty()) {
        nlohmann::json j;
        j["count"] = res.count;
        j["boxes"] = nlohmann::json::array();
        for (const ScoredBox& d : res.boxes)
            j["boxes"].push_back({d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.score});
        std::ofstream f(json_path, std::ios::binary | std::ios::trunc);
        GECO_CHECK(f.good(), "cannot write json: " + json_path);
        f << j.dump(2) << "\n";
    }
    if (!overlay_path.empty()) {
        image::ImageU8 overlay = img;
        for (const ScoredBox& d : res.boxes) image::draw_box(overlay, d.box, 60, 220, 60);
        for (const Box& e : exemplars) image::draw_box(overlay, e, 80, 120, 255);
        image::draw_text(overlay, 4, 4, std::to_string(res.count), 255, 255, 255);
        image::write_png(overlay_path, overlay);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-shot counting by detection"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out;
    int synth_n = 100, synth_size = 128, synth_max_objects = 12;
    double synth_distractors = 0.3;
    uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", synth_n, "number of scenes");
    synth->add_option("--size", synth_size, "square image side (multiple of 16)");
    synth->add_option("--max-objects", synth_max_objects, "max target instances per scene");
    synth->add_option("--distractors", synth_distractors, "distractor-class scene rate");
    synth->add_option("--seed", synth_seed, "generation seed");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string train_data, train_val, train_out, train_config, train_log;
    int train_pretrain = 2, train_epochs = 12;
    uint64_t train_seed = 0;
    train->add_option("--data", train_data, "training dataset directory")->required();
    train->add_option("--val-data", train_val,
                      "validation dataset directory (default: 10% holdout)");
    train->add_option("--out", train_out, "output checkpoint path")->required();
    train->add_option("--config", train_config, "JSON config file");
    train->add_option("--pretrain-epochs", train_pretrain, "gaussian-surrogate epochs");
    train->add_option("--epochs", train_epochs, "dense-loss epochs");
    auto* seed_opt = train->add_option("--seed", train_seed, "overrides the config seed");
    train->add_option("--log", train_log, "JSONL step log (default CKPT.train.jsonl)");

    // train-zero-shot
    auto* tzs = app.add_subcommand("train-zero-shot", "fine-tune the zero-shot prototype");
    std::string tzs_ckpt, tzs_data, tzs_out, tzs_config, tzs_log;
    int tzs_epochs = 10;
    tzs->add_option("--ckpt", tzs_ckpt, "trained checkpoint")->required();
    tzs->add_option("--data", tzs_data, "training dataset directory")->required();
    tzs->add_option("--out", tzs_out, "output checkpoint path")->required();
    tzs->add_option("--config", tzs_config, "JSON config file");
    tzs->add_option("--epochs", tzs_epochs, "fine-tune epochs");
    tzs->add_option("--log", tzs_log, "JSONL step log");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_mode = "few", eval_report, eval_config;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--mode", eval_mode, "few | one | zero");
    eval->add_option("--report", eval_report, "report JSON output path");
    eval->add_option("--config", eval_config, "JSON config file");

    // infer
    auto* infer = app.add_subcommand("infer", "run inference on one image");
    std::string infer_ckpt, infer_image, infer_exemplars, infer_overlay, infer_json,
        infer_config;
    bool infer_zero = false;
    infer->add_option("--ckpt", infer_ckpt, "checkpoint")->required();
    infer->add_option("--image", infer_image, "input PNG")->required();
    infer->add_option("--exemplars", infer_exemplars, "\"x1,y1,x2,y2;...\"");
    infer->add_flag("--zero-shot", infer_zero, "exemplar-free two-pass inference");
    infer->add_option("--overlay", infer_overlay, "overlay PNG output");
    infer->add_option("--json", infer_json, "JSON output path");
    infer->add_option("--config", infer_config, "JSON config file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return run_synth(synth_out, synth_n, synth_size, synth_max_objects,
                             synth_distractors, synth_seed);
        if (train->parsed())
            return run_train(train_data, train_val, train_out, train_config, train_pretrain,
                             train_epochs, train_seed, seed_opt->count() > 0, train_log);
        if (tzs->parsed())
            return run_train_zero_shot(tzs_ckpt, tzs_data, tzs_out, tzs_config, tzs_epochs,
                                       tzs_log);
        if (eval->parsed())
            return run_eval(eval_ckpt, eval_data, eval_mode, eval_report, eval_config);
        if (infer->parsed())
            return run_infer(infer_ckpt, infer_image, infer_exemplars, infer_zero,
                             infer_overlay, infer_json, infer_config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
