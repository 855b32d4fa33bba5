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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "uvos/autodiff.hpp"
#include "uvos/common.hpp"
#include "uvos/core.hpp"
#include "uvos/imageops.hpp"
#include "uvos/network.hpp"

// Frame-granularity loss (plain and bootstrapped forms) and the short-term
// forward-backward patch tracking loss.
namespace uvos {

// One forward-backward tracking episode over a three-frame clip.
struct PatchTrack {
    Rect start_patch;                   // pixel rectangle on frame 1
    std::vector<PointI> forward_path;   // peak cells on frames 2 and 3
    std::vector<PointI> backward_path;  // peak cells on frames 2 and 1, reversed
    ad::Var backward_response;          // final response on frame 1's grid
    GaussianTarget target;
};

// Blending state for the bootstrapped frame loss. `previous` holds the
// binarized model predictions from the last completed iteration, keyed by
// video id, one feature-resolution mask per frame.
struct BootstrapState {
    double alpha = 0.05;
    int iteration = 1;
    std::map<std::string, std::vector<Tensor>> previous;

    bool has(const std::string& video, int frame) const {
        auto it = previous.find(video);
        return it != previous.end() && frame >= 0 &&
               frame < static_cast<int>(it->second.size()) && !it->second[frame].empty();
    }

    const Tensor& prediction(const std::string& video, int frame) const {
        if (!has(video, frame))
            throw state_error("BootstrapState: no stored prediction for " + video + " frame " +
                              std::to_string(frame));
        return previous.at(video)[frame];
    }
};

// Mean binary cross-entropy of predictions P against the binary prior Q,
// probabilities clamped to [1e-6, 1-1e-6].
inline ad::Var frame_loss(const ad::Var& P, const Tensor& Q) {
    if (!P.value().same_shape(Q)) throw dimension_error("frame_loss: shape mismatch");
    return ad::bce_mean(P, Q, 1e-6);
}

// Bootstrapped form: target is the convex blend alpha*Q + (1-alpha)*prev.
// The paper-form objective is a log-likelihood; this returns its negation so
// the trainer always minimizes.
inline ad::Var bootstrap_frame_loss(const ad::Var& P_new, const Tensor& Q, const Tensor& prev,
                                    double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw config_error("bootstrap_frame_loss: alpha outside [0,1]");
    if (!P_new.value().same_shape(Q) || !Q.same_shape(prev))
        throw dimension_error("bootstrap_frame_loss: shape mismatch");
    Tensor target(Q.shape());
    for (int i = 0; i < Q.size(); ++i) target[i] = alpha * Q[i] + (1.0 - alpha) * prev[i];
    return ad::bce_mean(P_new, target, 1e-6);
}

// Correlates a patch embedding over a frame embedding; the peak cell is the
// patch's new location (row-major first occurrence on ties).
inline std::pair<ad::Var, PointI> track_step(const ad::Var& patch_feat,
                                             const ad::Var& frame_feat) {
    ad::Var response = cross_correlate(patch_feat, frame_feat);
    return {response, peak_cell(response.value())};
}

namespace detail {
// Pixel rectangle of `size` centered at stride x the peak cell, clamped into
// the frame.
inline Rect recrop_rect(PointI peak, int size, int frame_w, int frame_h, int stride) {
    Rect r;
    r.w = r.h = size;
    r.x = clamp_int(stride * peak.x - size / 2, 0, frame_w - size);
    r.y = clamp_int(stride * peak.y - size / 2, 0, frame_h - size);
    return r;
}
}  // namespace detail

// Runs the three-frame schedule: track the patch forward frame1 -> frame2 ->
// frame3, re-cropping at each peak, then backward frame3 -> frame2 -> frame1.
// The final backward response is scored against a Gaussian centered at the
// patch's original position. Frame features may be passed in when the caller
// already computed them.
inline PatchTrack forward_backward(Network& net, const Tensor& f1, const Tensor& f2,
                                   const Tensor& f3, Rect patch_rect, bool training,
                                   ad::Var feat1, ad::Var feat2, ad::Var feat3) {
    if (!f1.same_shape(f2) || !f2.same_shape(f3))
        throw dimension_error("forward_backward: frame shape mismatch");
    const int H = f1.dim(1), W = f1.dim(2);
    if (patch_rect.w != patch_rect.h) throw numeric_error("forward_backward: patch not square");
    const int size = patch_rect.w;
    if (size % 4 != 0 || size < 8) throw numeric_error("forward_backward: bad patch size");
    if (patch_rect.x < 0 || patch_rect.y < 0 || patch_rect.x + size > W ||
        patch_rect.y + size > H)
        throw numeric_error("forward_backward: patch outside frame");
    const int stride = 4;

    PatchTrack track;
    track.start_patch = patch_rect;

    // forward: frame1 patch -> frame2 -> frame3
    ad::Var kernel = net.phi(ad::constant(crop(f1, patch_rect)), training);
    auto [resp2, peak2] = track_step(kernel, feat2);
    track.forward_path.push_back(peak2);
    Rect rect2 = detail::recrop_rect(peak2, size, W, H, stride);
    kernel = net.phi(ad::constant(crop(f2, rect2)), training);
    auto [resp3, peak3] = track_step(kernel, feat3);
    track.forward_path.push_back(peak3);
    Rect rect3 = detail::recrop_rect(peak3, size, W, H, stride);

    // backward: frame3 patch -> frame2 -> frame1
    kernel = net.phi(ad::constant(crop(f3, rect3)), training);
    auto [resp_b2, peak_b2] = track_step(kernel, feat2);
    track.backward_path.push_back(peak_b2);
    Rect rect_b2 = detail::recrop_rect(peak_b2, size, W, H, stride);
    kernel = net.phi(ad::constant(crop(f2, rect_b2)), training);
    auto [resp_b1, peak_b1] = track_step(kernel, feat1);
    track.backward_path.push_back(peak_b1);
    track.backward_response = resp_b1;

    const Point center{(patch_rect.x + size / 2.0) / stride, (patch_rect.y + size / 2.0) / stride};
    track.target = gaussian_target(center, static_cast<double>(size) / stride, W / stride,
                                   H / stride);
    return track;
}

// Convenience overload that embeds the three frames itself.
inline PatchTrack forward_backward(Network& net, const Tensor& f1, const Tensor& f2,
                                   const Tensor& f3, Rect patch_rect, bool training = true) {
    ad::Var feat1 = net.phi(ad::constant(f1), training);
    ad::Var feat2 = net.phi(ad::constant(f2), training);
    ad::Var feat3 = net.phi(ad::constant(f3), training);
    return forward_backward(net, f1, f2, f3, patch_rect, training, feat1, feat2, feat3);
}

// Mean squared deviation of the backward response from the Gaussian target.
inline ad::Var short_term_loss(const PatchTrack& track) {
    if (!track.backward_response.defined()) throw state_error("short_term_loss: track incomplete");
    return ad::mse_mean(track.backward_response, track.target.data);
}

}  // namespace uvos
