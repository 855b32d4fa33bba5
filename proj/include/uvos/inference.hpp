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
#include <functional>
#include <utility>
#include <vector>

#include "uvos/common.hpp"
#include "uvos/imageops.hpp"
#include "uvos/loss_long_video.hpp"
#include "uvos/network.hpp"
#include "uvos/tensor.hpp"

// The three inference modes: object-level readout, instance-level readout
// with track linking, and one-shot mask propagation along frame affinities.
namespace uvos {

// Per-cell distribution over L labels (background is label 0), stored
// [L, h, w]. After assignment every cell is one-hot.
struct LabelField {
    Tensor probs;

    int label_count() const { return probs.dim(0); }
    int height() const { return probs.dim(1); }
    int width() const { return probs.dim(2); }

    void validate_distribution(double tol = 1e-5) const {
        if (probs.ndim() != 3) throw dimension_error("LabelField: expects [L,h,w]");
        const int L = probs.dim(0), n = probs.dim(1) * probs.dim(2);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int l = 0; l < L; ++l) s += probs[l * n + i];
            if (std::abs(s - 1.0) > tol)
                throw numeric_error("LabelField: cell distribution does not sum to 1");
        }
    }

    void validate_one_hot() const {
        validate_distribution(1e-12);
        for (int i = 0; i < probs.size(); ++i)
            if (probs[i] != 0.0 && probs[i] != 1.0)
                throw input_error("LabelField: not one-hot");
    }

    static LabelField from_ids(const Tensor& ids, int L) {
        if (ids.ndim() != 2) throw dimension_error("LabelField: ids must be [h,w]");
        LabelField f;
        f.probs = Tensor({L, ids.dim(0), ids.dim(1)});
        const int n = ids.size();
        for (int i = 0; i < n; ++i) {
            const int l = static_cast<int>(ids[i]);
            if (l < 0 || l >= L || ids[i] != std::floor(ids[i]))
                throw input_error("LabelField: id outside [0, L)");
            f.probs[l * n + i] = 1.0;
        }
        return f;
    }

    // Argmax per cell, ties to the lower label index.
    Tensor to_ids() const {
        const int L = probs.dim(0), n = probs.dim(1) * probs.dim(2);
        Tensor ids({probs.dim(1), probs.dim(2)});
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bv = probs[i];
            for (int l = 1; l < L; ++l)
                if (probs[l * n + i] > bv) {
                    bv = probs[l * n + i];
                    best = l;
                }
            ids[i] = best;
        }
        return ids;
    }
};

// K-1 reference indices spread evenly over the video. Videos shorter than the
// abstract repeat indices, which amounts to sampling with replacement.
inline std::vector<int> abstract_reference_indices(int frame_count, int K) {
    if (K < 2) throw config_error("abstract_reference_indices: K must be >= 2");
    if (frame_count < 1) throw dimension_error("abstract_reference_indices: empty video");
    std::vector<int> refs;
    refs.reserve(K - 1);
    for (int k = 0; k < K - 1; ++k) {
        const double pos = K == 2 ? 0.0
                                  : static_cast<double>(k) * (frame_count - 1) / (K - 2);
        refs.push_back(clamp_int(static_cast<int>(std::lround(pos)), 0, frame_count - 1));
    }
    return refs;
}

namespace detail {
inline std::vector<Tensor> eval_features(Network& net, const std::vector<Tensor>& frames) {
    std::vector<Tensor> feats;
    feats.reserve(frames.size());
    for (const auto& f : frames) feats.push_back(net.phi_eval(f));
    return feats;
}
}  // namespace detail

// Readout probability for one frame given precomputed per-frame features.
inline Tensor readout_probability(Network& net, const std::vector<Tensor>& features, int t,
                                  int K = 8) {
    const std::vector<int> refs = abstract_reference_indices(
        static_cast<int>(features.size()), K);
    std::vector<ad::Var> vars;
    vars.reserve(refs.size() + 1);
    vars.push_back(ad::constant(features[t]));  // query at index 0
    for (int r : refs) vars.push_back(ad::constant(features[r]));
    AggregateResult agg = aggregate_global(vars, 0);
    return net.upsilon(agg.r).value();
}

// Object-level readout: per frame, aggregate the video abstract, read the
// probability map, upsample 4x, threshold at 0.5, and clean up with one
// opening and closing.
inline std::vector<Tensor> zvos_object(Network& net, const std::vector<Tensor>& frames,
                                       int K = 8) {
    if (frames.empty()) throw dimension_error("zvos_object: empty video");
    const std::vector<Tensor> feats = detail::eval_features(net, frames);
    std::vector<Tensor> masks;
    masks.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) {
        Tensor p = readout_probability(net, feats, static_cast<int>(t), K);
        p = resize_bilinear(p, frames[t].dim(1), frames[t].dim(2));
        Tensor m(p.shape());
        for (int i = 0; i < p.size(); ++i) m[i] = p[i] > 0.5 ? 1.0 : 0.0;
        masks.push_back(morph_close(morph_open(m)));
    }
    return masks;
}

// One linked object hypothesis across frames. Mask entries are empty tensors
// on frames the track does not cover.
struct InstanceTrack {
    int id = 0;
    std::vector<Tensor> masks;
    std::vector<Rect> boxes;  // zero-sized when absent

    int covered_frames() const {
        int n = 0;
        for (const auto& m : masks) n += m.empty() ? 0 : 1;
        return n;
    }
};

namespace detail {
inline Rect bounding_box(const Tensor& mask) {
    int x0 = mask.dim(1), y0 = mask.dim(0), x1 = -1, y1 = -1;
    for (int y = 0; y < mask.dim(0); ++y)
        for (int x = 0; x < mask.dim(1); ++x)
            if (mask.at(y, x) != 0.0) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return Rect{0, 0, 0, 0};
    return Rect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}
}  // namespace detail

// Greedy IoU linking of per-frame components into tracks. Candidates smaller
// than min_area_frac of the frame are dropped; a track is extended only from
// its previous frame; tracks covering fewer than min_track_len frames are
// discarded and ids are renumbered 1..n in creation order.
inline std::vector<InstanceTrack> link_tracks(const std::vector<Tensor>& object_masks,
                                              double min_area_frac = 0.001,
                                              double iou_threshold = 0.3,
                                              int min_track_len = 3) {
    const int T = static_cast<int>(object_masks.size());
    struct Working {
        std::vector<Tensor> masks;
        int last_frame = -1;
    };
    std::vector<Working> tracks;

    for (int t = 0; t < T; ++t) {
        const Tensor& m = object_masks[t];
        const double min_area = min_area_frac * m.size();
        int n = 0;
        const Tensor labels = connected_components(m, &n);
        std::vector<Tensor> candidates;
        for (int c = 1; c <= n; ++c) {
            Tensor cm(m.shape());
            double area = 0.0;
            for (int i = 0; i < labels.size(); ++i)
                if (labels[i] == c) {
                    cm[i] = 1.0;
                    area += 1.0;
                }
            if (area >= min_area) candidates.push_back(std::move(cm));
        }

        // IoU of every active track's previous mask against every candidate
        struct Pair {
            double iou;
            int track, cand;
        };
        std::vector<Pair> pairs;
        for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
            if (tracks[ti].last_frame != t - 1) continue;
            for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
                const double iou = mask_iou(tracks[ti].masks[t - 1], candidates[ci]);
                if (iou >= iou_threshold)
                    pairs.push_back({iou, static_cast<int>(ti), static_cast<int>(ci)});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            if (a.iou != b.iou) return a.iou > b.iou;
            if (a.track != b.track) return a.track < b.track;
            return a.cand < b.cand;
        });
        std::vector<bool> track_used(tracks.size(), false), cand_used(candidates.size(), false);
        for (const auto& p : pairs) {
            if (track_used[p.track] || cand_used[p.cand]) continue;
            track_used[p.track] = true;
            cand_used[p.cand] = true;
            tracks[p.track].masks[t] = std::move(candidates[p.cand]);
            tracks[p.track].last_frame = t;
        }
        for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
            if (cand_used[ci]) continue;
            Working w;
            w.masks.resize(T);
            w.masks[t] = std::move(candidates[ci]);
            w.last_frame = t;
            tracks.push_back(std::move(w));
        }
    }

    std::vector<InstanceTrack> out;
    for (auto& w : tracks) {
        int covered = 0;
        for (const auto& m : w.masks) covered += m.empty() ? 0 : 1;
        if (covered < min_track_len) continue;
        InstanceTrack tr;
        tr.id = static_cast<int>(out.size()) + 1;
        tr.masks = std::move(w.masks);
        tr.boxes.reserve(T);
        for (const auto& m : tr.masks)
            tr.boxes.push_back(m.empty() ? Rect{0, 0, 0, 0} : detail::bounding_box(m));
        out.push_back(std::move(tr));
    }
    return out;
}

inline std::vector<InstanceTrack> zvos_instance(Network& net, const std::vector<Tensor>& frames,
                                                int K = 8) {
    return link_tracks(zvos_object(net, frames, K));
}

// Test hook: replaces the learned frame-to-frame affinity.
using AffinityProvider = std::function<Tensor(const Tensor& prev_feat, const Tensor& cur_feat)>;

// Propagation affinity restriction: per column, keep only source cells within
// a Chebyshev window around the target cell (a motion prior), then only the
// top_k strongest of those, renormalized to unit column mass. radius < 0
// picks a radius proportional to the grid (at least 2); radius/top_k of 0
// disable the respective restriction. Columns stay stochastic; an identity
// affinity passes through unchanged.
inline Tensor restrict_affinity(const Tensor& A, int grid_w, int grid_h, int radius = -1,
                                int top_k = 8) {
    const int n = grid_w * grid_h;
    if (A.ndim() != 2 || A.dim(0) != n || A.dim(1) != n)
        throw dimension_error("restrict_affinity: affinity/grid mismatch");
    if (radius < 0) radius = std::max(2, std::min(grid_w, grid_h) / 8);
    if (radius == 0) radius = std::max(grid_w, grid_h);  // window off
    Tensor out({n, n});
    std::vector<std::pair<double, int>> cand;
    for (int c = 0; c < n; ++c) {
        const int cx = c % grid_w, cy = c / grid_w;
        cand.clear();
        for (int ry = std::max(0, cy - radius); ry <= std::min(grid_h - 1, cy + radius); ++ry)
            for (int rx = std::max(0, cx - radius); rx <= std::min(grid_w - 1, cx + radius); ++rx)
                cand.emplace_back(A.at(ry * grid_w + rx, c), ry * grid_w + rx);
        const int k = top_k > 0 ? std::min<int>(top_k, cand.size())
                                : static_cast<int>(cand.size());
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        double mass = 0.0;
        for (int i = 0; i < k; ++i) mass += cand[i].first;
        if (mass <= 0.0) {
            out.at(c, c) = 1.0;  // degenerate column: hold the label in place
            continue;
        }
        for (int i = 0; i < k; ++i) out.at(cand[i].second, c) = cand[i].first / mass;
    }
    return out;
}

// Label propagation at feature resolution: labels flow strictly from frame
// t-1 to t through the column-stochastic affinity, each cell taking the
// argmax label (ties to the lower index). Without an injected provider the
// affinity is the pairwise co-attention restricted by the motion window.
inline std::vector<LabelField> ovos_propagate_fields(Network& net,
                                                     const std::vector<Tensor>& frames,
                                                     const Tensor& first_ids_grid,
                                                     const AffinityProvider& provider = {}) {
    if (frames.empty()) throw dimension_error("ovos_propagate: empty video");
    const int h = frames[0].dim(1) / 4, w = frames[0].dim(2) / 4;
    if (first_ids_grid.ndim() != 2 || first_ids_grid.dim(0) != h || first_ids_grid.dim(1) != w)
        throw dimension_error("ovos_propagate: first mask grid mismatch");
    int L = 0;
    for (int i = 0; i < first_ids_grid.size(); ++i)
        L = std::max(L, static_cast<int>(first_ids_grid[i]) + 1);
    if (L < 2) throw input_error("ovos_propagate: first mask names no instances");

    const std::vector<Tensor> feats = detail::eval_features(net, frames);
    const int wh = h * w;

    std::vector<LabelField> fields;
    fields.reserve(frames.size());
    LabelField current = LabelField::from_ids(first_ids_grid, L);
    current.validate_one_hot();
    fields.push_back(current);

    for (std::size_t t = 1; t < frames.size(); ++t) {
        const Tensor A = provider
                             ? provider(feats[t - 1], feats[t])
                             : restrict_affinity(pairwise_affinity(feats[t - 1], feats[t]), w, h);
        if (A.ndim() != 2 || A.dim(0) != wh || A.dim(1) != wh)
            throw dimension_error("ovos_propagate: affinity shape mismatch");
        // Y: [wh, L] one-hot rows from the previous field
        Tensor Y({wh, L});
        const int n = wh;
        for (int i = 0; i < n; ++i)
            for (int l = 0; l < L; ++l) Y.at(i, l) = current.probs[l * n + i];
        Tensor V = matmul(A, Y, true, false);  // v_m = sum_n A(n,m) y_n
        LabelField next;
        next.probs = Tensor({L, h, w});
        for (int m = 0; m < wh; ++m) {
            int best = 0;
            double bv = V.at(m, 0);
            for (int l = 1; l < L; ++l)
                if (V.at(m, l) > bv) {
                    bv = V.at(m, l);
                    best = l;
                }
            next.probs[best * n + m] = 1.0;
        }
        fields.push_back(next);
        current = std::move(next);
    }
    return fields;
}

// Pixel-level wrapper: downsamples the annotation to the feature grid,
// propagates, and upsamples assignments 4x nearest-neighbor. The first
// frame's output is the annotation itself.
inline std::vector<Tensor> ovos_propagate(Network& net, const std::vector<Tensor>& frames,
                                          const Tensor& first_ids,
                                          const AffinityProvider& provider = {}) {
    if (frames.empty()) throw dimension_error("ovos_propagate: empty video");
    const int H = frames[0].dim(1), W = frames[0].dim(2);
    if (first_ids.ndim() != 2 || first_ids.dim(0) != H || first_ids.dim(1) != W)
        throw dimension_error("ovos_propagate: first mask resolution mismatch");
    const Tensor grid_ids = resize_nearest(first_ids, H / 4, W / 4);
    const std::vector<LabelField> fields = ovos_propagate_fields(net, frames, grid_ids, provider);
    std::vector<Tensor> out;
    out.reserve(fields.size());
    out.push_back(first_ids);
    for (std::size_t t = 1; t < fields.size(); ++t)
        out.push_back(resize_nearest(fields[t].to_ids(), H, W));
    return out;
}

}  // namespace uvos
