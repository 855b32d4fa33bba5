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
#include <array>
#include <cmath>

#include "uvos/common.hpp"
#include "uvos/imageops.hpp"
#include "uvos/tensor.hpp"

// Initial fore-background knowledge per frame: a background-prior saliency
// heuristic (pixels unlike the border band are salient) binarized by Otsu
// thresholding plus light morphology.
namespace uvos {

struct SaliencyMap {
    Tensor data;  // [H,W] in [0,1]
};

enum class PriorSource { saliency, bootstrap };

struct PriorMask {
    Tensor data;  // [H,W] strictly {0,1}
    PriorSource source = PriorSource::saliency;

    void validate() const {
        if (!is_binary(data)) throw numeric_error("PriorMask: not strictly binary");
    }
};

// Saliency = min-max normalized Euclidean color distance to the mean color of
// the border band (one cell of a 16x16 frame partition wide), then a 3x3 box
// blur. A contrast-free frame maps to all zeros.
inline SaliencyMap compute_saliency(const Tensor& frame) {
    if (frame.ndim() != 3 || frame.dim(0) != 3)
        throw dimension_error("compute_saliency: expects [3,H,W]");
    const int h = frame.dim(1), w = frame.dim(2);
    if (h < 8 || w < 8) throw dimension_error("compute_saliency: frame below 8x8");

    const int band = std::max(1, std::min(h, w) / 16);
    std::array<double, 3> mean = {0.0, 0.0, 0.0};
    int count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (y >= band && y < h - band && x >= band && x < w - band) continue;
            for (int c = 0; c < 3; ++c) mean[c] += frame.at(c, y, x);
            ++count;
        }
    for (int c = 0; c < 3; ++c) mean[c] /= count;

    Tensor dist({h, w});
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = frame.at(c, y, x) - mean[c];
                d2 += d * d;
            }
            const double d = std::sqrt(d2);
            dist.at(y, x) = d;
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    if (hi - lo <= 0.0) return SaliencyMap{Tensor({h, w})};  // contrast-free frame
    for (int i = 0; i < dist.size(); ++i) dist[i] = (dist[i] - lo) / (hi - lo);

    // 3x3 box blur, averaging over the in-bounds neighborhood
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    s += dist.at(yy, xx);
                    ++n;
                }
            out.at(y, x) = s / n;
        }
    return SaliencyMap{std::move(out)};
}

// Otsu threshold over a 256-bin histogram of saliency values; foreground is
// the strictly-above-threshold class. Deterministic: ties take the lowest
// threshold index. Returns the separating bin index in [0,255].
inline int otsu_threshold_bin(const Tensor& s) {
    std::array<double, 256> hist = {};
    const int n = s.size();
    for (int i = 0; i < n; ++i) {
        const int b = std::min(255, static_cast<int>(s[i] * 256.0));
        hist[b] += 1.0;
    }
    double total_mean = 0.0;
    for (int b = 0; b < 256; ++b) total_mean += b * hist[b];
    total_mean /= n;

    double best = -1.0;
    int best_k = 255;
    double w0 = 0.0, sum0 = 0.0;
    for (int k = 0; k < 255; ++k) {
        w0 += hist[k];
        sum0 += k * hist[k];
        const double w1 = n - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (total_mean * n - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_k = k;
        }
    }
    return best_k;
}

// Binarize a saliency map: Otsu threshold, then one morphological opening
// followed by closing with a 3x3 element. All-equal input yields an
// all-background mask.
inline PriorMask binarize(const SaliencyMap& s) {
    const Tensor& d = s.data;
    if (d.ndim() != 2) throw dimension_error("binarize: expects [H,W]");
    PriorMask out;
    out.source = PriorSource::saliency;
    if (d.max() - d.min() <= 0.0) {
        out.data = Tensor(d.shape());
        return out;
    }
    const int k = otsu_threshold_bin(d);
    Tensor m(d.shape());
    for (int i = 0; i < d.size(); ++i)
        m[i] = std::min(255, static_cast<int>(d[i] * 256.0)) > k ? 1.0 : 0.0;
    out.data = morph_close(morph_open(m));
    return out;
}

inline PriorMask prior_from_frame(const Tensor& frame) {
    return binarize(compute_saliency(frame));
}

}  // namespace uvos
