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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "uvos/common.hpp"
#include "uvos/imageops.hpp"
#include "uvos/tensor.hpp"

// Frame-directory ingestion, mask I/O and the synthetic moving-shape video
// generator. OpenCV is used strictly for image codecs; resizing and pixel
// math stay in-library.
namespace uvos {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// single-image I/O. Frames are [3,H,W] RGB in [0,1]; masks are [H,W] grids of
// instance ids (0 = background) stored as 8-bit indexed PNG.

inline Tensor load_image(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw io_error("load_image: unreadable image: " + path);
    Tensor out({3, bgr.rows, bgr.cols});
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            out.at(0, y, x) = row[x][2] / 255.0;
            out.at(1, y, x) = row[x][1] / 255.0;
            out.at(2, y, x) = row[x][0] / 255.0;
        }
    }
    return out;
}

inline void save_image(const std::string& path, const Tensor& img) {
    if (img.ndim() != 3 || img.dim(0) != 3) throw dimension_error("save_image: expects [3,H,W]");
    cv::Mat bgr(img.dim(1), img.dim(2), CV_8UC3);
    auto to_byte = [](double v) {
        return static_cast<std::uint8_t>(std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0));
    };
    for (int y = 0; y < img.dim(1); ++y) {
        auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.dim(2); ++x) {
            row[x][2] = to_byte(img.at(0, y, x));
            row[x][1] = to_byte(img.at(1, y, x));
            row[x][0] = to_byte(img.at(2, y, x));
        }
    }
    if (!cv::imwrite(path, bgr)) throw io_error("save_image: cannot write: " + path);
}

inline Tensor load_mask(const std::string& path) {
    cv::Mat gray = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw io_error("load_mask: unreadable image: " + path);
    Tensor out({gray.rows, gray.cols});
    for (int y = 0; y < gray.rows; ++y) {
        const auto* row = gray.ptr<std::uint8_t>(y);
        for (int x = 0; x < gray.cols; ++x) out.at(y, x) = row[x];
    }
    return out;
}

inline void save_mask(const std::string& path, const Tensor& ids) {
    if (ids.ndim() != 2) throw dimension_error("save_mask: expects [H,W]");
    cv::Mat gray(ids.dim(0), ids.dim(1), CV_8UC1);
    for (int y = 0; y < ids.dim(0); ++y) {
        auto* row = gray.ptr<std::uint8_t>(y);
        for (int x = 0; x < ids.dim(1); ++x) {
            const double v = ids.at(y, x);
            if (v < 0.0 || v > 255.0 || v != std::floor(v))
                throw numeric_error("save_mask: ids must be integers in [0,255]");
            row[x] = static_cast<std::uint8_t>(v);
        }
    }
    if (!cv::imwrite(path, gray)) throw io_error("save_mask: cannot write: " + path);
}

// Fixed palette for visualizing instance ids (id 0 stays black).
inline void id_color(int id, double rgb[3]) {
    static const double palette[8][3] = {
        {0.90, 0.10, 0.10}, {0.10, 0.75, 0.10}, {0.15, 0.35, 0.95}, {0.95, 0.80, 0.10},
        {0.80, 0.15, 0.80}, {0.10, 0.80, 0.80}, {0.95, 0.55, 0.15}, {0.60, 0.60, 0.60},
    };
    if (id <= 0) {
        rgb[0] = rgb[1] = rgb[2] = 0.0;
        return;
    }
    const double* p = palette[(id - 1) % 8];
    rgb[0] = p[0];
    rgb[1] = p[1];
    rgb[2] = p[2];
}

// Side-by-side frame and colorized mask, the CLI's --overlay output.
inline void save_overlay(const std::string& path, const Tensor& frame, const Tensor& ids) {
    if (frame.ndim() != 3 || ids.ndim() != 2 || frame.dim(1) != ids.dim(0) ||
        frame.dim(2) != ids.dim(1))
        throw dimension_error("save_overlay: frame/mask mismatch");
    const int h = frame.dim(1), w = frame.dim(2);
    Tensor canvas({3, h, 2 * w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double rgb[3];
            id_color(static_cast<int>(ids.at(y, x)), rgb);
            for (int c = 0; c < 3; ++c) {
                canvas.at(c, y, x) = frame.at(c, y, x);
                canvas.at(c, y, w + x) = rgb[c];
            }
        }
    save_image(path, canvas);
}

// ---------------------------------------------------------------------------
// dataset layout: root/<video_id>/frames/%05d.png, root/<video_id>/masks/%05d.png

struct VideoInfo {
    std::string id;
    std::vector<std::string> frame_paths;
    std::vector<std::string> mask_paths;  // empty when no ground truth

    int frame_count() const { return static_cast<int>(frame_paths.size()); }
};

struct VideoDataset {
    std::string root;
    int frame_size = 0;  // square resize target; 0 = native
    std::vector<VideoInfo> videos;

    int video_count() const { return static_cast<int>(videos.size()); }

    // Frame resized (aspect-distorting) to frame_size when set.
    Tensor load_frame(int v, int f) const {
        Tensor img = load_image(videos.at(v).frame_paths.at(f));
        if (frame_size > 0 && (img.dim(1) != frame_size || img.dim(2) != frame_size))
            img = resize_bilinear(img, frame_size, frame_size);
        return img;
    }

    Tensor load_gt_mask(int v, int f) const {
        const auto& paths = videos.at(v).mask_paths;
        if (f >= static_cast<int>(paths.size()) || paths[f].empty())
            throw io_error("load_gt_mask: no mask for frame " + std::to_string(f));
        Tensor m = load_mask(paths[f]);
        if (frame_size > 0 && (m.dim(0) != frame_size || m.dim(1) != frame_size))
            m = resize_nearest(m, frame_size, frame_size);
        return m;
    }
};

namespace detail {
inline std::vector<std::string> sorted_images(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}
}  // namespace detail

inline VideoDataset load_dataset(const std::string& root, int frame_size) {
    if (!fs::is_directory(root)) throw io_error("load_dataset: not a directory: " + root);
    VideoDataset ds;
    ds.root = root;
    ds.frame_size = frame_size;
    std::vector<std::string> subdirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) subdirs.push_back(e.path().filename().string());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& name : subdirs) {
        VideoInfo v;
        v.id = name;
        const fs::path vdir = fs::path(root) / name;
        v.frame_paths = detail::sorted_images(vdir / "frames");
        if (v.frame_paths.empty()) v.frame_paths = detail::sorted_images(vdir);
        if (v.frame_paths.empty()) {
            std::cerr << "load_dataset: skipping empty video dir " << name << "\n";
            continue;
        }
        v.mask_paths = detail::sorted_images(vdir / "masks");
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// synthetic generator

enum class Shape { square, disc, triangle };

struct SynthSpec {
    int num_videos = 4;
    int frames_per_video = 24;
    int frame_size = 64;
    int objects_min = 1;
    int objects_max = 1;
    std::vector<Shape> shapes = {Shape::square, Shape::disc, Shape::triangle};
    double velocity_min = 0.5;  // px/frame
    double velocity_max = 1.5;
    double texture_amplitude = 0.08;
    int object_size_min = 20;
    int object_size_max = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (frames_per_video < 6) throw config_error("SynthSpec: frames_per_video must be >= 6");
        if (num_videos < 1) throw config_error("SynthSpec: need at least one video");
        if (frame_size < 16) throw config_error("SynthSpec: frame_size below 16");
        if (objects_min < 1 || objects_max > 3 || objects_min > objects_max)
            throw config_error("SynthSpec: objects per video must lie in [1,3]");
        if (shapes.empty()) throw config_error("SynthSpec: empty shape set");
        if (velocity_min <= 0.0 || velocity_max < velocity_min)
            throw config_error("SynthSpec: bad velocity range");
        if (object_size_min < 8 || object_size_max < object_size_min ||
            object_size_max > frame_size / 2)
            throw config_error("SynthSpec: object size range incompatible with frame size");
    }
};

inline Shape shape_from_name(const std::string& s) {
    if (s == "square") return Shape::square;
    if (s == "disc") return Shape::disc;
    if (s == "triangle") return Shape::triangle;
    throw config_error("unknown shape name: " + s);
}

inline const char* shape_name(Shape s) {
    switch (s) {
        case Shape::square: return "square";
        case Shape::disc: return "disc";
        default: return "triangle";
    }
}

// Flat key = value file, keys matching the SynthSpec field names; `shapes` is
// a comma-separated list.
inline SynthSpec parse_synth_spec(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("parse_synth_spec: cannot open: " + path);
    SynthSpec spec;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("parse_synth_spec: missing '=' on line " + std::to_string(line_no));
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "num_videos") spec.num_videos = std::stoi(val);
            else if (key == "frames_per_video") spec.frames_per_video = std::stoi(val);
            else if (key == "frame_size") spec.frame_size = std::stoi(val);
            else if (key == "objects_min") spec.objects_min = std::stoi(val);
            else if (key == "objects_max") spec.objects_max = std::stoi(val);
            else if (key == "velocity_min") spec.velocity_min = std::stod(val);
            else if (key == "velocity_max") spec.velocity_max = std::stod(val);
            else if (key == "texture_amplitude") spec.texture_amplitude = std::stod(val);
            else if (key == "object_size_min") spec.object_size_min = std::stoi(val);
            else if (key == "object_size_max") spec.object_size_max = std::stoi(val);
            else if (key == "seed") spec.seed = std::stoull(val);
            else if (key == "shapes") {
                spec.shapes.clear();
                std::stringstream ss(val);
                std::string tok;
                while (std::getline(ss, tok, ',')) spec.shapes.push_back(shape_from_name(trim(tok)));
            } else {
                throw config_error("parse_synth_spec: unknown key '" + key + "'");
            }
        } catch (const config_error&) {
            throw;
        } catch (const std::invalid_argument&) {
            throw config_error("parse_synth_spec: bad value for '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

namespace detail {

// Smooth per-channel noise: a coarse random grid upsampled bilinearly.
inline Tensor smooth_noise(int h, int w, int coarse, double amplitude, Rng& rng) {
    Tensor grid({3, coarse, coarse});
    for (int i = 0; i < grid.size(); ++i) grid[i] = (rng.uniform() * 2.0 - 1.0) * amplitude;
    return resize_bilinear(grid, h, w);
}

inline bool inside_shape(Shape s, double px, double py, double x0, double y0, double size) {
    const double cx = x0 + size / 2.0, cy = y0 + size / 2.0;
    switch (s) {
        case Shape::square:
            return px >= x0 && px < x0 + size && py >= y0 && py < y0 + size;
        case Shape::disc: {
            const double r = size / 2.0;
            return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
        }
        case Shape::triangle: {
            // isoceles, apex up: vertices (x0, y0+size), (x0+size, y0+size), (cx, y0)
            if (py < y0 || py > y0 + size) return false;
            const double frac = (py - y0) / size;  // 0 at apex, 1 at base
            const double half = frac * size / 2.0;
            return px >= cx - half && px <= cx + half;
        }
    }
    return false;
}

struct SynthObject {
    Shape shape;
    double size;
    double x, y;    // top-left of the bounding box
    double vx, vy;  // px/frame
    double color[3];
    Tensor texture;  // smooth noise over the bounding box
};

}  // namespace detail

// Writes a deterministic synthetic dataset: textured static background plus
// 1..3 rigid shapes per video moving at constant velocity and reflecting at
// the borders. Ground-truth instance masks (ids 1..n, draw order resolves
// overlap) go to masks/.
inline VideoDataset generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw io_error("generate_synthetic: cannot create output dir: " + out_dir);

    const int S = spec.frame_size;
    Rng root_rng(spec.seed);
    for (int v = 0; v < spec.num_videos; ++v) {
        Rng rng = root_rng.fork(static_cast<std::uint64_t>(v) + 1);
        char vid[16];
        std::snprintf(vid, sizeof(vid), "v%03d", v);
        const fs::path vdir = fs::path(out_dir) / vid;
        fs::create_directories(vdir / "frames");
        fs::create_directories(vdir / "masks");

        double bg_color[3];
        for (double& c : bg_color) c = 0.2 + 0.6 * rng.uniform();
        Tensor bg_noise = detail::smooth_noise(S, S, 8, spec.texture_amplitude, rng);

        const int n_objects = rng.uniform_int(spec.objects_min, spec.objects_max);
        std::vector<detail::SynthObject> objects;
        for (int o = 0; o < n_objects; ++o) {
            detail::SynthObject obj;
            obj.shape = spec.shapes[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<int>(spec.shapes.size()) - 1))];
            obj.size = rng.uniform_int(spec.object_size_min / 4, spec.object_size_max / 4) * 4;
            obj.x = rng.uniform_real(1.0, S - obj.size - 1.0);
            obj.y = rng.uniform_real(1.0, S - obj.size - 1.0);
            const double speed = rng.uniform_real(spec.velocity_min, spec.velocity_max);
            const double angle = rng.uniform_real(0.0, 2.0 * 3.14159265358979323846);
            obj.vx = speed * std::cos(angle);
            obj.vy = speed * std::sin(angle);
            // high contrast against the background
            for (int c = 0; c < 3; ++c) {
                double col = rng.uniform();
                if (std::abs(col - bg_color[c]) < 0.3) col = bg_color[c] > 0.5 ? col * 0.3
                                                                               : 1.0 - (1.0 - col) * 0.3;
                obj.color[c] = col;
            }
            const int ts = static_cast<int>(obj.size);
            obj.texture = detail::smooth_noise(ts, ts, 4, spec.texture_amplitude, rng);
            objects.push_back(std::move(obj));
        }

        for (int f = 0; f < spec.frames_per_video; ++f) {
            Tensor frame({3, S, S});
            Tensor mask({S, S});
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x)
                        frame.at(c, y, x) =
                            std::min(std::max(bg_color[c] + bg_noise.at(c, y, x), 0.0), 1.0);

            for (std::size_t oi = 0; oi < objects.size(); ++oi) {
                const auto& obj = objects[oi];
                const int x0 = static_cast<int>(std::floor(obj.x));
                const int y0 = static_cast<int>(std::floor(obj.y));
                const int sz = static_cast<int>(obj.size);
                for (int y = std::max(0, y0); y < std::min(S, y0 + sz + 1); ++y)
                    for (int x = std::max(0, x0); x < std::min(S, x0 + sz + 1); ++x) {
                        if (!detail::inside_shape(obj.shape, x + 0.5, y + 0.5, obj.x, obj.y,
                                                  obj.size))
                            continue;
                        mask.at(y, x) = static_cast<double>(oi + 1);
                        const int ty = clamp_int(y - y0, 0, sz - 1);
                        const int tx = clamp_int(x - x0, 0, sz - 1);
                        for (int c = 0; c < 3; ++c)
                            frame.at(c, y, x) = std::min(
                                std::max(obj.color[c] + obj.texture.at(c, ty, tx), 0.0), 1.0);
                    }
            }

            char fname[16];
            std::snprintf(fname, sizeof(fname), "%05d.png", f);
            save_image((vdir / "frames" / fname).string(), frame);
            save_mask((vdir / "masks" / fname).string(), mask);

            // advance with border reflection
            for (auto& obj : objects) {
                obj.x += obj.vx;
                obj.y += obj.vy;
                if (obj.x < 0.0) {
                    obj.x = -obj.x;
                    obj.vx = -obj.vx;
                }
                if (obj.y < 0.0) {
                    obj.y = -obj.y;
                    obj.vy = -obj.vy;
                }
                if (obj.x + obj.size > S) {
                    obj.x = 2.0 * (S - obj.size) - obj.x;
                    obj.vx = -obj.vx;
                }
                if (obj.y + obj.size > S) {
                    obj.y = 2.0 * (S - obj.size) - obj.y;
                    obj.vy = -obj.vy;
                }
            }
        }
    }
    return load_dataset(out_dir, spec.frame_size);
}

// Simple memoizing frame loader for training loops.
class FrameCache {
public:
    explicit FrameCache(const VideoDataset& ds) : ds_(&ds) {}

    const Tensor& frame(int v, int f) {
        const std::int64_t key = static_cast<std::int64_t>(v) << 32 | static_cast<unsigned>(f);
        auto it = cache_.find(key);
        if (it == cache_.end()) it = cache_.emplace(key, ds_->load_frame(v, f)).first;
        return it->second;
    }

private:
    const VideoDataset* ds_;
    std::map<std::int64_t, Tensor> cache_;
};

}  // namespace uvos
