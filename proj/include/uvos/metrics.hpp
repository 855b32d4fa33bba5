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
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "uvos/common.hpp"
#include "uvos/dataio.hpp"
#include "uvos/imageops.hpp"
#include "uvos/tensor.hpp"

// DAVIS-protocol evaluation: region similarity J (IoU) and boundary accuracy
// F, with per-video recall and decay statistics.
namespace uvos {

// J = |pred AND gt| / |pred OR gt|; 1 when both masks are empty.
inline double region_similarity(const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt)) throw dimension_error("region_similarity: resolution mismatch");
    return mask_iou(pred, gt);
}

// F-measure of boundary agreement within a Euclidean pixel tolerance,
// computed against disc-dilated boundaries. Both boundaries empty -> 1; one
// empty -> 0.
inline double boundary_accuracy(const Tensor& pred, const Tensor& gt, int tolerance_px = 2) {
    if (!pred.same_shape(gt)) throw dimension_error("boundary_accuracy: resolution mismatch");
    const Tensor bp = boundary(pred);
    const Tensor bg = boundary(gt);
    const double np = mask_area(bp), ng = mask_area(bg);
    if (np == 0.0 && ng == 0.0) return 1.0;
    if (np == 0.0 || ng == 0.0) return 0.0;
    const Tensor gd = dilate_disc(bg, tolerance_px);
    const Tensor pd = dilate_disc(bp, tolerance_px);
    double hit_p = 0.0, hit_g = 0.0;
    for (int i = 0; i < bp.size(); ++i) {
        if (bp[i] != 0.0 && gd[i] != 0.0) hit_p += 1.0;
        if (bg[i] != 0.0 && pd[i] != 0.0) hit_g += 1.0;
    }
    const double precision = hit_p / np;
    const double recall = hit_g / ng;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// aggregation

struct VideoEval {
    std::string id;
    std::vector<double> J, F;     // per evaluated frame
    std::vector<int> missing;     // frame indices without predictions
    double mean_j = 0.0, mean_f = 0.0;
    double recall_j = 0.0, recall_f = 0.0;
    double decay_j = 0.0, decay_f = 0.0;
};

struct EvalReport {
    std::vector<VideoEval> videos;
    double mean_j = 0.0, mean_f = 0.0;
    int total_missing = 0;

    bool complete() const { return total_missing == 0; }
};

namespace detail {

inline double vec_mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double vec_recall(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double n = 0.0;
    for (double x : v) n += x > 0.5 ? 1.0 : 0.0;
    return n / static_cast<double>(v.size());
}

// DAVIS decay: mean over the first quartile of the frame sequence minus mean
// over the last quartile (index-based bins).
inline double vec_decay(const std::vector<double>& v) {
    const int n = static_cast<int>(v.size());
    if (n < 4) return 0.0;
    std::vector<double> first(v.begin(), v.begin() + n / 4);
    std::vector<double> last(v.begin() + (3 * n) / 4, v.end());
    return vec_mean(first) - vec_mean(last);
}

inline void finalize(VideoEval& ve) {
    ve.mean_j = vec_mean(ve.J);
    ve.mean_f = vec_mean(ve.F);
    ve.recall_j = vec_recall(ve.J);
    ve.recall_f = vec_recall(ve.F);
    ve.decay_j = vec_decay(ve.J);
    ve.decay_f = vec_decay(ve.F);
}

inline Tensor binarized(const Tensor& ids) {
    Tensor out(ids.shape());
    for (int i = 0; i < ids.size(); ++i) out[i] = ids[i] != 0.0 ? 1.0 : 0.0;
    return out;
}

inline Tensor id_mask(const Tensor& ids, int id) {
    Tensor out(ids.shape());
    for (int i = 0; i < ids.size(); ++i) out[i] = ids[i] == id ? 1.0 : 0.0;
    return out;
}

inline std::set<int> present_ids(const Tensor& ids) {
    std::set<int> out;
    for (int i = 0; i < ids.size(); ++i)
        if (ids[i] != 0.0) out.insert(static_cast<int>(ids[i]));
    return out;
}

}  // namespace detail

enum class EvalMode { object, instance };

inline EvalMode eval_mode_from_name(const std::string& s) {
    if (s == "object") return EvalMode::object;
    if (s == "instance") return EvalMode::instance;
    throw config_error("eval: unknown mode '" + s + "' (expected object or instance)");
}

// Scores one video's prediction masks against ground truth. Object mode
// binarizes both sides; instance mode maps prediction ids to ground-truth ids
// by greedy maximal IoU on the first frame, then averages per-instance scores
// per frame.
inline VideoEval evaluate_video(const std::string& id, const std::vector<Tensor>& pred,
                                const std::vector<Tensor>& gt, EvalMode mode,
                                int boundary_tolerance = 2) {
    if (pred.size() != gt.size()) throw dimension_error("evaluate_video: frame count mismatch");
    VideoEval ve;
    ve.id = id;

    std::map<int, int> gt_to_pred;
    if (mode == EvalMode::instance && !gt.empty()) {
        // first-frame assignment
        const std::set<int> gids = detail::present_ids(gt[0]);
        std::set<int> pids = detail::present_ids(pred[0]);
        std::vector<std::pair<double, std::pair<int, int>>> ious;
        for (int g : gids)
            for (int p : pids)
                ious.push_back({mask_iou(detail::id_mask(gt[0], g), detail::id_mask(pred[0], p)),
                                {g, p}});
        std::sort(ious.begin(), ious.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;  // deterministic tie-break
        });
        std::set<int> used_g, used_p;
        for (const auto& [iou, gp] : ious) {
            if (iou <= 0.0) break;
            if (used_g.count(gp.first) || used_p.count(gp.second)) continue;
            gt_to_pred[gp.first] = gp.second;
            used_g.insert(gp.first);
            used_p.insert(gp.second);
        }
    }

    for (std::size_t f = 0; f < gt.size(); ++f) {
        if (pred[f].empty()) {
            ve.missing.push_back(static_cast<int>(f));
            continue;
        }
        if (mode == EvalMode::object) {
            const Tensor p = detail::binarized(pred[f]);
            const Tensor g = detail::binarized(gt[f]);
            ve.J.push_back(region_similarity(p, g));
            ve.F.push_back(boundary_accuracy(p, g, boundary_tolerance));
        } else {
            const std::set<int> gids = detail::present_ids(gt[f]);
            if (gids.empty()) {
                ve.J.push_back(region_similarity(detail::binarized(pred[f]),
                                                 detail::binarized(gt[f])));
                ve.F.push_back(boundary_accuracy(detail::binarized(pred[f]),
                                                 detail::binarized(gt[f]), boundary_tolerance));
                continue;
            }
            double j = 0.0, fm = 0.0;
            for (int g : gids) {
                const Tensor gm = detail::id_mask(gt[f], g);
                Tensor pm(gt[f].shape());
                if (auto it = gt_to_pred.find(g); it != gt_to_pred.end())
                    pm = detail::id_mask(pred[f], it->second);
                j += region_similarity(pm, gm);
                fm += boundary_accuracy(pm, gm, boundary_tolerance);
            }
            ve.J.push_back(j / static_cast<double>(gids.size()));
            ve.F.push_back(fm / static_cast<double>(gids.size()));
        }
    }
    detail::finalize(ve);
    return ve;
}

// Walks gt_root's videos (directories with masks/ or plain image files) and
// scores same-named predictions pred_root/<video>/<frame>.png.
inline EvalReport evaluate(const std::string& pred_root, const std::string& gt_root,
                           EvalMode mode, int boundary_tolerance = 2) {
    if (!fs::is_directory(gt_root)) throw io_error("evaluate: gt dir missing: " + gt_root);
    if (!fs::is_directory(pred_root)) throw io_error("evaluate: pred dir missing: " + pred_root);
    EvalReport report;
    std::vector<std::string> subdirs;
    for (const auto& e : fs::directory_iterator(gt_root))
        if (e.is_directory()) subdirs.push_back(e.path().filename().string());
    std::sort(subdirs.begin(), subdirs.end());

    for (const auto& name : subdirs) {
        const fs::path vdir = fs::path(gt_root) / name;
        std::vector<std::string> gt_paths = detail::sorted_images(vdir / "masks");
        if (gt_paths.empty()) gt_paths = detail::sorted_images(vdir);
        if (gt_paths.empty()) continue;
        std::vector<Tensor> gt, pred;
        for (const auto& gp : gt_paths) {
            gt.push_back(load_mask(gp));
            const fs::path pp = fs::path(pred_root) / name / fs::path(gp).filename();
            if (fs::exists(pp)) {
                Tensor pm = load_mask(pp.string());
                if (!pm.same_shape(gt.back()))
                    pm = resize_nearest(pm, gt.back().dim(0), gt.back().dim(1));
                pred.push_back(std::move(pm));
            } else {
                pred.emplace_back();
            }
        }
        report.videos.push_back(evaluate_video(name, pred, gt, mode, boundary_tolerance));
        report.total_missing += static_cast<int>(report.videos.back().missing.size());
    }

    std::vector<double> vj, vf;
    for (const auto& v : report.videos) {
        if (v.J.empty()) continue;
        vj.push_back(v.mean_j);
        vf.push_back(v.mean_f);
    }
    report.mean_j = detail::vec_mean(vj);
    report.mean_f = detail::vec_mean(vf);
    return report;
}

inline void write_report_table(std::ostream& os, const EvalReport& r) {
    os << std::fixed << std::setprecision(4);
    os << "video          meanJ  recallJ  decayJ   meanF  recallF  decayF  missing\n";
    for (const auto& v : r.videos) {
        os << std::left << std::setw(14) << v.id << std::right << std::setw(7) << v.mean_j
           << std::setw(9) << v.recall_j << std::setw(8) << v.decay_j << std::setw(8) << v.mean_f
           << std::setw(9) << v.recall_f << std::setw(8) << v.decay_f << std::setw(9)
           << v.missing.size() << "\n";
    }
    os << "dataset mean J: " << r.mean_j << "  mean F: " << r.mean_f
       << "  missing frames: " << r.total_missing << "\n";
}

inline void write_report_tsv(std::ostream& os, const EvalReport& r) {
    os << "video\tmean_j\trecall_j\tdecay_j\tmean_f\trecall_f\tdecay_f\tmissing\n";
    os << std::setprecision(10);
    for (const auto& v : r.videos)
        os << v.id << "\t" << v.mean_j << "\t" << v.recall_j << "\t" << v.decay_j << "\t"
           << v.mean_f << "\t" << v.recall_f << "\t" << v.decay_f << "\t" << v.missing.size()
           << "\n";
    os << "__dataset__\t" << r.mean_j << "\t\t\t" << r.mean_f << "\t\t\t" << r.total_missing
       << "\n";
}

}  // namespace uvos
