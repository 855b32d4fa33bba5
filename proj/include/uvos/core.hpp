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

#include <cmath>
#include <string>

#include "uvos/autodiff.hpp"
#include "uvos/common.hpp"
#include "uvos/tensor.hpp"

// Semantic tensor types and the shared numeric primitives used by every
// granularity: cross-correlation, column softmax, Gaussian target maps.
namespace uvos {

// C-channel spatial grid at 1/4 input resolution, stored [C,H,W].
struct FeatureMap {
    Tensor data;
    int stride = 4;

    FeatureMap() = default;
    FeatureMap(Tensor t, int stride_px = 4) : data(std::move(t)), stride(stride_px) {
        validate();
    }

    int channels() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }

    void validate() const {
        if (data.ndim() != 3) throw dimension_error("FeatureMap: expects [C,H,W]");
        if (data.dim(0) < 1 || data.dim(1) < 1 || data.dim(2) < 1)
            throw dimension_error("FeatureMap: degenerate shape");
        if (!data.all_finite()) throw numeric_error("FeatureMap: non-finite entries");
    }
};

// Sigmoid-normalized correlation response, [H,W] with entries in [0,1].
struct ResponseMap {
    Tensor data;

    ResponseMap() = default;
    explicit ResponseMap(Tensor t) : data(std::move(t)) { validate(); }

    void validate() const {
        if (data.ndim() != 2) throw dimension_error("ResponseMap: expects [H,W]");
        for (int i = 0; i < data.size(); ++i)
            if (!(data[i] >= 0.0 && data[i] <= 1.0))
                throw numeric_error("ResponseMap: entry outside [0,1]");
    }
};

// Column-stochastic cross-frame similarity. Rows index reference positions,
// columns index query positions; each column sums to 1.
struct AffinityMatrix {
    Tensor data;
    std::string row_frame;  // axis metadata: which frame the rows index
    std::string col_frame;

    AffinityMatrix() = default;
    explicit AffinityMatrix(Tensor t, std::string rows = "", std::string cols = "")
        : data(std::move(t)), row_frame(std::move(rows)), col_frame(std::move(cols)) {
        validate();
    }

    void validate() const {
        if (data.ndim() != 2) throw dimension_error("AffinityMatrix: expects a matrix");
        for (int c = 0; c < data.dim(1); ++c) {
            double s = 0.0;
            for (int r = 0; r < data.dim(0); ++r) {
                const double v = data.at(r, c);
                if (!(v >= 0.0 && v <= 1.0))
                    throw numeric_error("AffinityMatrix: entry outside [0,1]");
                s += v;
            }
            if (std::abs(s - 1.0) > 1e-5)
                throw numeric_error("AffinityMatrix: column does not sum to 1");
        }
    }
};

// Peak-normalized isotropic Gaussian on a grid; peak value 1 at the center.
struct GaussianTarget {
    Tensor data;  // [H,W]
    Point center;
    double sigma = 1.0;

    // Continuous evaluation, independent of the sampled grid.
    double value_at(Point q) const {
        const double dx = q.x - center.x;
        const double dy = q.y - center.y;
        return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
};

// ---------------------------------------------------------------------------

// Per-column softmax with max-subtraction stabilization.
inline ad::Var column_softmax(const ad::Var& scores) { return ad::softmax_cols(scores); }

inline Tensor column_softmax(const Tensor& scores) {
    return ad::softmax_cols(ad::constant(scores)).value();
}

// Same-padding cross-correlation of a kernel feature patch over a search
// feature grid. Scores are divided by (kernel area x channels) and squashed
// through the logistic, so the response lives in (0,1). The kernel's anchor
// cell is (kw/2, kh/2) from its top-left corner.
inline ad::Var cross_correlate(const ad::Var& kernel, const ad::Var& search) {
    const Tensor& k = kernel.value();
    const Tensor& s = search.value();
    if (k.ndim() != 3 || s.ndim() != 3) throw dimension_error("cross_correlate: expects [C,H,W]");
    if (k.dim(0) != s.dim(0)) throw dimension_error("cross_correlate: channel mismatch");
    if (k.dim(1) > s.dim(1) || k.dim(2) > s.dim(2))
        throw dimension_error("cross_correlate: kernel larger than search");
    const int C = k.dim(0), kh = k.dim(1), kw = k.dim(2);
    ad::ConvGeom g;
    g.pad_top = kh / 2;
    g.pad_bottom = kh - 1 - g.pad_top;
    g.pad_left = kw / 2;
    g.pad_right = kw - 1 - g.pad_left;
    ad::Var w = ad::reshape(kernel, {1, C, kh, kw});
    ad::Var bias = ad::constant(Tensor({1}));
    ad::Var raw = ad::conv2d(search, w, bias, g);
    ad::Var scaled = ad::scale(raw, 1.0 / (static_cast<double>(kh) * kw * C));
    return ad::reshape(ad::sigmoid(scaled), {s.dim(1), s.dim(2)});
}

inline ResponseMap cross_correlate(const FeatureMap& kernel, const FeatureMap& search) {
    return ResponseMap(
        cross_correlate(ad::constant(kernel.data), ad::constant(search.data)).value());
}

// Peak cell of a response map, row-major first occurrence on ties.
inline PointI peak_cell(const Tensor& response) {
    if (response.ndim() != 2) throw dimension_error("peak_cell: expects [H,W]");
    const int flat = response.argmax();
    return PointI{flat % response.dim(1), flat / response.dim(1)};
}

// Gaussian target centered at `center` on a w x h grid; sigma is 0.1 x
// patch_size, both in the grid's own coordinate units.
inline GaussianTarget gaussian_target(Point center, double patch_size, int grid_w, int grid_h) {
    if (patch_size <= 0.0) throw numeric_error("gaussian_target: patch_size must be positive");
    if (center.x < 0.0 || center.y < 0.0 || center.x > grid_w - 1 || center.y > grid_h - 1)
        throw numeric_error("gaussian_target: center outside grid");
    GaussianTarget t;
    t.center = center;
    t.sigma = 0.1 * patch_size;
    t.data = Tensor({grid_h, grid_w});
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x)
            t.data.at(y, x) = t.value_at(Point{static_cast<double>(x), static_cast<double>(y)});
    return t;
}

}  // namespace uvos
