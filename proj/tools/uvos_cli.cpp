// Copyright 2026 The uvos Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line entry point: generate / train / infer / eval / selfcheck.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uvos/uvos.hpp"

namespace fs = std::filesystem;

namespace {

// Rounds to the nearest multiple of four (backbone stride), at least eight.
int processing_dim(int native) {
    const int r = ((native + 2) / 4) * 4;
    return std::max(8, r);
}

// A --video argument may point at the video directory itself or straight at
// its frames/ subdirectory; the video id is the directory name either way.
struct SingleVideo {
    std::string id;
    std::vector<std::string> frame_paths;
};

SingleVideo open_video(const std::string& dir) {
    fs::path p(dir);
    if (!fs::is_directory(p)) throw uvos::io_error("infer: not a directory: " + dir);
    fs::path frames_dir = fs::is_directory(p / "frames") ? p / "frames" : p;
    SingleVideo v;
    fs::path id_src = frames_dir.filename() == "frames" ? frames_dir.parent_path() : frames_dir;
    v.id = id_src.filename().string();
    v.frame_paths = uvos::detail::sorted_images(frames_dir);
    if (v.frame_paths.empty()) throw uvos::io_error("infer: no frames under " + dir);
    return v;
}

// Per-frame instance-id masks from linked tracks (components are disjoint
// within a frame, so assignment order does not matter).
std::vector<uvos::Tensor> compose_instance_masks(const std::vector<uvos::InstanceTrack>& tracks,
                                                 int frame_count, int h, int w) {
    std::vector<uvos::Tensor> out(frame_count, uvos::Tensor({h, w}));
    for (const auto& t : tracks)
        for (int f = 0; f < frame_count; ++f) {
            if (f >= static_cast<int>(t.masks.size()) || t.masks[f].empty()) continue;
            for (int i = 0; i < t.masks[f].size(); ++i)
                if (t.masks[f][i] != 0.0) out[f][i] = t.id;
        }
    return out;
}

int run_generate(const std::string& spec_path, const std::string& out_dir) {
    const uvos::SynthSpec spec = uvos::parse_synth_spec(spec_path);
    const uvos::VideoDataset ds = uvos::generate_synthetic(spec, out_dir);
    std::cout << "generated " << ds.video_count() << " videos x " << spec.frames_per_video
              << " frames (" << spec.frame_size << "x" << spec.frame_size << ") under " << out_dir
              << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    const uvos::TrainConfig cfg = uvos::parse_train_config(config_path);
    const uvos::VideoDataset ds = uvos::load_dataset(data_dir, cfg.frame_size);
    fs::create_directories(out_dir);
    uvos::save_train_config(out_dir + "/train_config.txt", cfg);
    const uvos::TrainResult result = uvos::train(cfg, ds, out_dir, &std::cout);
    std::cout << "trained " << result.log.size() << " steps; final total "
              << (result.log.empty() ? 0.0 : result.log.back().total) << "\n"
              << "checkpoint: " << result.final_checkpoint << "\n"
              << "loss log:   " << result.log_path << "\n";
    return 0;
}

int run_infer(const std::string& mode, const std::string& ckpt, const std::string& video_dir,
              const std::string& first_mask, const std::string& out_dir, bool overlay) {
    uvos::Network net = uvos::load_checkpoint(ckpt);
    const SingleVideo video = open_video(video_dir);

    std::vector<uvos::Tensor> native;
    native.reserve(video.frame_paths.size());
    for (const auto& p : video.frame_paths) native.push_back(uvos::load_image(p));
    const int H = native[0].dim(1), W = native[0].dim(2);
    const int PH = processing_dim(H), PW = processing_dim(W);

    std::vector<uvos::Tensor> frames;
    frames.reserve(native.size());
    for (const auto& f : native)
        frames.push_back(PH == H && PW == W ? f : uvos::resize_bilinear(f, PH, PW));

    std::vector<uvos::Tensor> masks;  // instance-id masks at processing size
    if (mode == "zvos-object") {
        masks = uvos::zvos_object(net, frames);
    } else if (mode == "zvos-instance") {
        const auto tracks = uvos::zvos_instance(net, frames);
        masks = compose_instance_masks(tracks, static_cast<int>(frames.size()), PH, PW);
        std::cout << "linked " << tracks.size() << " instance tracks\n";
    } else if (mode == "ovos") {
        uvos::Tensor first = uvos::load_mask(first_mask);
        if (first.dim(0) != H || first.dim(1) != W)
            throw uvos::input_error("infer: --first-mask resolution differs from the frames");
        if (PH != H || PW != W) first = uvos::resize_nearest(first, PH, PW);
        masks = uvos::ovos_propagate(net, frames, first);
    } else {
        throw uvos::config_error("infer: unknown mode '" + mode + "'");
    }

    const fs::path video_out = fs::path(out_dir) / video.id;
    fs::create_directories(video_out);
    if (overlay) fs::create_directories(video_out / "overlay");
    for (std::size_t t = 0; t < masks.size(); ++t) {
        const std::string name = fs::path(video.frame_paths[t]).filename().string();
        uvos::Tensor ids = masks[t].dim(0) == H && masks[t].dim(1) == W
                               ? masks[t]
                               : uvos::resize_nearest(masks[t], H, W);
        uvos::save_mask((video_out / name).string(), ids);
        if (overlay) uvos::save_overlay((video_out / "overlay" / name).string(), native[t], ids);
    }
    std::cout << "wrote " << masks.size() << " masks to " << video_out.string() << "\n";
    return 0;
}

int run_eval(const std::string& pred, const std::string& gt, const std::string& mode,
             const std::string& report_path) {
    const uvos::EvalReport report = uvos::evaluate(pred, gt, uvos::eval_mode_from_name(mode));
    uvos::write_report_table(std::cout, report);
    if (!report_path.empty()) {
        std::ofstream os(report_path);
        if (!os) throw uvos::io_error("eval: cannot write report: " + report_path);
        uvos::write_report_tsv(os, report);
        std::cout << "report: " << report_path << "\n";
    }
    return 0;
}

int run_selfcheck() {
    const bool ok = uvos::report_checks(uvos::selfcheck_all(), std::cout);
    std::cout << (ok ? "selfcheck: all checks passed\n" : "selfcheck: FAILURES above\n");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unsupervised multi-granularity video object segmentation"};
    app.require_subcommand(1);
    int workers = 1;
    app.add_option("--workers", workers, "loader threads (bounds loader concurrency only)")
        ->check(CLI::PositiveNumber);

    std::string spec_path, gen_out;
    CLI::App* gen = app.add_subcommand("generate", "render a synthetic video dataset");
    gen->add_option("--spec", spec_path, "synthesis spec file")->required();
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    std::string train_config, train_data, train_out;
    CLI::App* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--config", train_config, "training config file")->required();
    tr->add_option("--data", train_data, "training dataset root")->required();
    tr->add_option("--out", train_out, "checkpoint/log output directory")->required();

    std::string infer_mode, infer_ckpt, infer_video, infer_first, infer_out;
    bool infer_overlay = false;
    CLI::App* inf = app.add_subcommand("infer", "segment one video");
    inf->add_option("--mode", infer_mode, "zvos-object | zvos-instance | ovos")
        ->required()
        ->check(CLI::IsMember({"zvos-object", "zvos-instance", "ovos"}));
    inf->add_option("--ckpt", infer_ckpt, "checkpoint file")->required();
    inf->add_option("--video", infer_video, "video directory (frames/ inside or flat)")
        ->required();
    inf->add_option("--first-mask", infer_first, "first-frame annotation PNG (ovos mode)");
    inf->add_option("--out", infer_out, "output directory")->required();
    inf->add_flag("--overlay", infer_overlay, "also write side-by-side overlay PNGs");

    std::string eval_pred, eval_gt, eval_mode = "object", eval_report;
    CLI::App* ev = app.add_subcommand("eval", "score predictions against ground truth");
    ev->add_option("--pred", eval_pred, "prediction root")->required();
    ev->add_option("--gt", eval_gt, "ground-truth root")->required();
    ev->add_option("--mode", eval_mode, "object | instance")
        ->check(CLI::IsMember({"object", "instance"}));
    ev->add_option("--report", eval_report, "write a machine-readable TSV report here");

    CLI::App* sc = app.add_subcommand("selfcheck", "run the built-in verification suites");

    try {
        app.parse(argc, argv);
        if (inf->parsed() && infer_mode == "ovos" && infer_first.empty())
            throw CLI::ValidationError("--first-mask", "required when --mode ovos");
        if (gen->parsed()) return run_generate(spec_path, gen_out);
        if (tr->parsed()) return run_train(train_config, train_data, train_out);
        if (inf->parsed())
            return run_infer(infer_mode, infer_ckpt, infer_video, infer_first, infer_out,
                             infer_overlay);
        if (ev->parsed()) return run_eval(eval_pred, eval_gt, eval_mode, eval_report);
        if (sc->parsed()) return run_selfcheck();
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return 0;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
