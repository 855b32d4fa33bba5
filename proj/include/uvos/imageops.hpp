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
#include <limits>
#include <vector>

#include "uvos/common.hpp"
#include "uvos/tensor.hpp"

// Plain pixel-grid utilities shared by priors, metrics, inference and dataio:
// resizing, flips, binary morphology, connected components, boundaries and
// distance transforms. Images are [3,H,W] or [C,H,W] tensors, masks [H,W].
namespace uvos {

inline bool is_binary(const Tensor& m) {
    for (int i = 0; i < m.size(); ++i)
        if (m[i] != 0.0 && m[i] != 1.0) return false;
    return true;
}

inline Tensor crop(const Tensor& img, const Rect& r) {
    if (img.ndim() == 2) {
        if (r.x < 0 || r.y < 0 || r.x + r.w > img.dim(1) || r.y + r.h > img.dim(0))
            throw dimension_error("crop: rectangle outside image");
        Tensor out({r.h, r.w});
        for (int y = 0; y < r.h; ++y)
            for (int x = 0; x < r.w; ++x) out.at(y, x) = img.at(r.y + y, r.x + x);
        return out;
    }
    if (img.ndim() != 3) throw dimension_error("crop: expects [H,W] or [C,H,W]");
    if (r.x < 0 || r.y < 0 || r.x + r.w > img.dim(2) || r.y + r.h > img.dim(1))
        throw dimension_error("crop: rectangle outside image");
    Tensor out({img.dim(0), r.h, r.w});
    for (int c = 0; c < img.dim(0); ++c)
        for (int y = 0; y < r.h; ++y)
            for (int x = 0; x < r.w; ++x) out.at(c, y, x) = img.at(c, r.y + y, r.x + x);
    return out;
}

inline Tensor hflip(const Tensor& img) {
    Tensor out(img.shape());
    if (img.ndim() == 2) {
        for (int y = 0; y < img.dim(0); ++y)
            for (int x = 0; x < img.dim(1); ++x) out.at(y, x) = img.at(y, img.dim(1) - 1 - x);
        return out;
    }
    if (img.ndim() != 3) throw dimension_error("hflip: expects [H,W] or [C,H,W]");
    for (int c = 0; c < img.dim(0); ++c)
        for (int y = 0; y < img.dim(1); ++y)
            for (int x = 0; x < img.dim(2); ++x)
                out.at(c, y, x) = img.at(c, y, img.dim(2) - 1 - x);
    return out;
}

// ---------------------------------------------------------------------------
// resizing

namespace detail {
inline double sample_plane_bilinear(const double* p, int h, int w, double sy, double sx) {
    // half-pixel convention with edge clamping
    const double fy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
    const double fx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
    const int y0 = static_cast<int>(fy);
    const int x0 = static_cast<int>(fx);
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const double wy = fy - y0, wx = fx - x0;
    return p[y0 * w + x0] * (1 - wy) * (1 - wx) + p[y0 * w + x1] * (1 - wy) * wx +
           p[y1 * w + x0] * wy * (1 - wx) + p[y1 * w + x1] * wy * wx;
}
}  // namespace detail

// Nearest-neighbor resize for [H,W] or [C,H,W]. Deterministic half-pixel
// sampling: source index = floor((i + 0.5) * src / dst).
inline Tensor resize_nearest(const Tensor& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw dimension_error("resize_nearest: bad output size");
    const bool planar = img.ndim() == 3;
    if (!planar && img.ndim() != 2) throw dimension_error("resize_nearest: bad rank");
    const int C = planar ? img.dim(0) : 1;
    const int h = planar ? img.dim(1) : img.dim(0);
    const int w = planar ? img.dim(2) : img.dim(1);
    Tensor out(planar ? std::vector<int>{C, out_h, out_w} : std::vector<int>{out_h, out_w});
    std::vector<int> sx(out_w), sy(out_h);
    for (int x = 0; x < out_w; ++x)
        sx[x] = std::min(w - 1, static_cast<int>((x + 0.5) * w / out_w));
    for (int y = 0; y < out_h; ++y)
        sy[y] = std::min(h - 1, static_cast<int>((y + 0.5) * h / out_h));
    for (int c = 0; c < C; ++c) {
        const double* src = img.data() + static_cast<std::size_t>(c) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) dst[y * out_w + x] = src[sy[y] * w + sx[x]];
    }
    return out;
}

inline Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw dimension_error("resize_bilinear: bad output size");
    const bool planar = img.ndim() == 3;
    if (!planar && img.ndim() != 2) throw dimension_error("resize_bilinear: bad rank");
    const int C = planar ? img.dim(0) : 1;
    const int h = planar ? img.dim(1) : img.dim(0);
    const int w = planar ? img.dim(2) : img.dim(1);
    Tensor out(planar ? std::vector<int>{C, out_h, out_w} : std::vector<int>{out_h, out_w});
    const double ry = static_cast<double>(h) / out_h;
    const double rx = static_cast<double>(w) / out_w;
    for (int c = 0; c < C; ++c) {
        const double* src = img.data() + static_cast<std::size_t>(c) * h * w;
        double* dst = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const double sy = (y + 0.5) * ry - 0.5;
            for (int x = 0; x < out_w; ++x) {
                const double sxp = (x + 0.5) * rx - 0.5;
                dst[y * out_w + x] = detail::sample_plane_bilinear(src, h, w, sy, sxp);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// binary morphology (3x3 square structuring element)

// Erosion with the outside counting as background: foreground touching the
// image edge is eroded away. boundary() relies on exactly this so that
// edge-touching foreground counts as contour.
inline Tensor erode3x3(const Tensor& m) {
    if (m.ndim() != 2) throw dimension_error("erode3x3: expects [H,W]");
    const int h = m.dim(0), w = m.dim(1);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 1.0;
            for (int dy = -1; dy <= 1 && v > 0.0; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w || m.at(yy, xx) == 0.0) {
                        v = 0.0;
                        break;
                    }
                }
            out.at(y, x) = v;
        }
    return out;
}

// Erosion with border replication (out-of-bounds clamps to the nearest
// pixel), so opening/closing clean speckle without shaving objects that
// touch the image edge.
inline Tensor erode3x3_replicate(const Tensor& m) {
    if (m.ndim() != 2) throw dimension_error("erode3x3_replicate: expects [H,W]");
    const int h = m.dim(0), w = m.dim(1);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 1.0;
            for (int dy = -1; dy <= 1 && v > 0.0; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = clamp_int(y + dy, 0, h - 1);
                    const int xx = clamp_int(x + dx, 0, w - 1);
                    if (m.at(yy, xx) == 0.0) {
                        v = 0.0;
                        break;
                    }
                }
            out.at(y, x) = v;
        }
    return out;
}

inline Tensor dilate3x3(const Tensor& m) {
    if (m.ndim() != 2) throw dimension_error("dilate3x3: expects [H,W]");
    const int h = m.dim(0), w = m.dim(1);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            for (int dy = -1; dy <= 1 && v == 0.0; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w && m.at(yy, xx) != 0.0) {
                        v = 1.0;
                        break;
                    }
                }
            out.at(y, x) = v;
        }
    return out;
}

inline Tensor morph_open(const Tensor& m) { return dilate3x3(erode3x3_replicate(m)); }
inline Tensor morph_close(const Tensor& m) { return erode3x3_replicate(dilate3x3(m)); }

// Dilation by a Euclidean disc of the given radius (exact integer-offset disc).
inline Tensor dilate_disc(const Tensor& m, double radius) {
    if (m.ndim() != 2) throw dimension_error("dilate_disc: expects [H,W]");
    const int h = m.dim(0), w = m.dim(1);
    const int r = static_cast<int>(std::floor(radius));
    std::vector<PointI> offsets;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= radius * radius) offsets.push_back({dx, dy});
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (m.at(y, x) == 0.0) continue;
            for (const auto& o : offsets) {
                const int yy = y + o.y, xx = x + o.x;
                if (yy >= 0 && yy < h && xx >= 0 && xx < w) out.at(yy, xx) = 1.0;
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// components, boundaries, overlap

// 8-connected components of a binary mask, labeled 1..n in raster discovery
// order. Returns the label grid; n via out parameter.
inline Tensor connected_components(const Tensor& m, int* count = nullptr) {
    if (m.ndim() != 2) throw dimension_error("connected_components: expects [H,W]");
    const int h = m.dim(0), w = m.dim(1);
    Tensor labels({h, w});
    int next = 0;
    std::vector<PointI> queue;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (m.at(y, x) == 0.0 || labels.at(y, x) != 0.0) continue;
            ++next;
            labels.at(y, x) = next;
            queue.clear();
            queue.push_back({x, y});
            while (!queue.empty()) {
                const PointI p = queue.back();
                queue.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = p.y + dy, xx = p.x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        if (m.at(yy, xx) != 0.0 && labels.at(yy, xx) == 0.0) {
                            labels.at(yy, xx) = next;
                            queue.push_back({xx, yy});
                        }
                    }
            }
        }
    if (count) *count = next;
    return labels;
}

// Boundary = foreground pixels not surviving erosion (image-edge foreground
// counts as boundary).
inline Tensor boundary(const Tensor& m) {
    Tensor er = erode3x3(m);
    Tensor out(m.shape());
    for (int i = 0; i < m.size(); ++i) out[i] = (m[i] != 0.0 && er[i] == 0.0) ? 1.0 : 0.0;
    return out;
}

inline double mask_area(const Tensor& m) {
    double a = 0.0;
    for (int i = 0; i < m.size(); ++i) a += m[i] != 0.0 ? 1.0 : 0.0;
    return a;
}

// Intersection-over-union; defined as 1 when both masks are empty.
inline double mask_iou(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw dimension_error("mask_iou: resolution mismatch");
    double inter = 0.0, uni = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        const bool fa = a[i] != 0.0, fb = b[i] != 0.0;
        inter += (fa && fb) ? 1.0 : 0.0;
        uni += (fa || fb) ? 1.0 : 0.0;
    }
    return uni == 0.0 ? 1.0 : inter / uni;
}

// Exact Euclidean distance transform (distance to the nearest foreground
// pixel; infinity where the mask is empty). Two-pass 1-D lower-envelope
// algorithm on squared distances.
inline Tensor distance_transform(const Tensor& m) {
    if (m.ndim() != 2) throw dimension_error("distance_transform: expects [H,W]");
    const int h = m.dim(0), w = m.dim(1);
    const double INF = std::numeric_limits<double>::infinity();

    auto edt1d = [INF](const std::vector<double>& f, std::vector<double>& d) {
        const int n = static_cast<int>(f.size());
        std::vector<int> v(n);
        std::vector<double> z(n + 1);
        int k = 0;
        v[0] = 0;
        z[0] = -INF;
        z[1] = INF;
        for (int q = 1; q < n; ++q) {
            if (f[q] == INF) continue;
            if (f[v[k]] == INF) {
                v[k] = q;
                continue;
            }
            double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
            while (k > 0 && s <= z[k]) {
                --k;
                s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = INF;
        }
        k = 0;
        for (int q = 0; q < n; ++q) {
            while (z[k + 1] < q) ++k;
            const int vq = v[k];
            d[q] = f[vq] == INF ? INF : (q - vq) * static_cast<double>(q - vq) + f[vq];
        }
    };

    Tensor sq({h, w});
    // columns first
    std::vector<double> f(h), d(h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = m.at(y, x) != 0.0 ? 0.0 : INF;
        edt1d(f, d);
        for (int y = 0; y < h; ++y) sq.at(y, x) = d[y];
    }
    // rows
    std::vector<double> fr(w), dr(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) fr[x] = sq.at(y, x);
        edt1d(fr, dr);
        for (int x = 0; x < w; ++x) sq.at(y, x) = dr[x];
    }
    for (int i = 0; i < sq.size(); ++i) sq[i] = sq[i] == INF ? INF : std::sqrt(sq[i]);
    return sq;
}

}  // namespace uvos
