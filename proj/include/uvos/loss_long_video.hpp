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
#include <vector>

#include "uvos/autodiff.hpp"
#include "uvos/common.hpp"
#include "uvos/core.hpp"
#include "uvos/network.hpp"

// Long-term semantic matching loss over disordered frame pairs, and the
// video-granularity global aggregation plus instance-discrimination loss.
namespace uvos {

namespace detail {
inline ad::Var flatten_feature(const ad::Var& x) {
    const Tensor& v = x.value();
    if (v.ndim() == 2) return x;  // already [C, WH]
    if (v.ndim() != 3) throw dimension_error("flatten_feature: expects [C,H,W]");
    return ad::reshape(x, {v.dim(0), v.dim(1) * v.dim(2)});
}
}  // namespace detail

// Co-attention affinity between two equally shaped feature maps: inner
// products of flattened per-cell features, scaled by 1/sqrt(C), column
// softmax. Rows index cells of x_i, columns cells of x_j.
inline ad::Var pairwise_affinity(const ad::Var& x_i, const ad::Var& x_j) {
    const Tensor& a = x_i.value();
    const Tensor& b = x_j.value();
    if (!a.same_shape(b)) throw dimension_error("pairwise_affinity: shape mismatch");
    ad::Var fi = detail::flatten_feature(x_i);
    ad::Var fj = detail::flatten_feature(x_j);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fi.value().dim(0)));
    return ad::softmax_cols(ad::scale(ad::matmul(fi, fj, true, false), scale));
}

inline Tensor pairwise_affinity(const Tensor& x_i, const Tensor& x_j) {
    return pairwise_affinity(ad::constant(x_i), ad::constant(x_j)).value();
}

// 1 iff m lands within unit Euclidean distance of tau applied to o.
inline int geometric_consistency(Point m, Point o, const TransformParams& tau,
                                 Point center = {0.0, 0.0}) {
    const Point p = apply_transform(tau, o, center);
    const double dx = m.x - p.x, dy = m.y - p.y;
    return dx * dx + dy * dy <= 1.0 ? 1 : 0;
}

// Binary consistency gate over all (row cell, column cell) pairs of a W x H
// grid: gate(m, o) = 1 iff ||pos(m) - tau(pos(o))|| <= 1. Transforms are
// anchored at the grid center (W/2, H/2).
inline Tensor consistency_gate(const TransformParams& tau, int grid_w, int grid_h) {
    const int wh = grid_w * grid_h;
    const Point center{grid_w / 2.0, grid_h / 2.0};
    Tensor gate({wh, wh});
    std::vector<Point> mapped(wh);
    for (int o = 0; o < wh; ++o) {
        const Point op{static_cast<double>(o % grid_w), static_cast<double>(o / grid_w)};
        mapped[o] = apply_transform(tau, op, center);
    }
    for (int m = 0; m < wh; ++m) {
        const double mx = m % grid_w, my = m / grid_w;
        for (int o = 0; o < wh; ++o) {
            const double dx = mx - mapped[o].x, dy = my - mapped[o].y;
            gate.at(m, o) = (dx * dx + dy * dy <= 1.0) ? 1.0 : 0.0;
        }
    }
    return gate;
}

// Disordered frame pair with both affinity directions and regressed
// transforms. The gates are constants; gradients flow through the affinities.
struct MatchPair {
    int frame_i = 0, frame_j = 0;
    ad::Var affinity_ij;  // rows: cells of i, cols: cells of j
    ad::Var affinity_ji;
    TransformParams tau_ij;  // maps j-frame coordinates into frame i
    TransformParams tau_ji;
    Tensor gate_ij;  // consistency_gate(tau_ij)
    Tensor gate_ji;
};

// Negative affinity mass at geometrically consistent cell pairs, averaged
// over the columns of both directions. Every column carries unit mass, so the
// loss is bounded in [-1, 0] regardless of grid size, keeping its scale
// commensurate with the other granularity terms.
inline ad::Var long_term_loss(const MatchPair& pair) {
    const int wh = pair.affinity_ij.value().dim(0);
    ad::Var mass = ad::add(ad::masked_sum(pair.affinity_ij, pair.gate_ij),
                           ad::masked_sum(pair.affinity_ji, pair.gate_ji));
    return ad::scale(mass, -0.5 / wh);
}

// Soft consistency objective that gives kappa a gradient: the binary gate has
// none, so kappa's raw output is scored by exp(-d^2/2)-weighted affinity mass
// (negated, averaged per column). The affinity enters as a constant.
inline ad::Var kappa_soft_alignment(const ad::Var& tau_raw, const Tensor& affinity, int grid_w,
                                    int grid_h) {
    const int wh = grid_w * grid_h;
    if (tau_raw.value().size() != 6) throw dimension_error("kappa_soft_alignment: raw size != 6");
    if (affinity.ndim() != 2 || affinity.dim(0) != wh || affinity.dim(1) != wh)
        throw dimension_error("kappa_soft_alignment: affinity/grid mismatch");
    const Point center{grid_w / 2.0, grid_h / 2.0};
    const double* raw = tau_raw.value().data();
    const TransformParams tau = TransformParams::from_raw(raw);
    const double ct = std::cos(tau.theta), st = std::sin(tau.theta);

    double value = 0.0;
    Tensor grad({6});
    for (int o = 0; o < wh; ++o) {
        const double ux = (o % grid_w) - center.x;
        const double uy = (o / grid_w) - center.y;
        // v = Shear * Scale * u, f = center + R v + t
        const double vx = tau.sx * ux + tau.shear * tau.sy * uy;
        const double vy = tau.sy * uy;
        const double fx = center.x + ct * vx - st * vy + tau.tx;
        const double fy = center.y + st * vx + ct * vy + tau.ty;
        // per-parameter Jacobian columns of f
        const double jac[6][2] = {
            {1.0, 0.0},                                          // tx
            {0.0, 1.0},                                          // ty
            {-st * vx - ct * vy, ct * vx - st * vy},             // theta
            {ct * tau.sx * ux, st * tau.sx * ux},                // raw sx (log-scale)
            {ct * tau.shear * tau.sy * uy - st * tau.sy * uy,    // raw sy (log-scale)
             st * tau.shear * tau.sy * uy + ct * tau.sy * uy},
            {ct * tau.sy * uy, st * tau.sy * uy},                // shear
        };
        for (int m = 0; m < wh; ++m) {
            const double a = affinity.at(m, o);
            if (a == 0.0) continue;
            const double dx = (m % grid_w) - fx;
            const double dy = (m / grid_w) - fy;
            const double w = a * std::exp(-0.5 * (dx * dx + dy * dy));
            value += w;
            for (int k = 0; k < 6; ++k) grad[k] += w * (dx * jac[k][0] + dy * jac[k][1]);
        }
    }
    const double norm = -1.0 / wh;
    Tensor out({1});
    out[0] = norm * value;
    grad.scale_(norm);
    return ad::make_node(std::move(out), {tau_raw}, [grad](ad::Node& n) {
        Tensor g = grad;
        g.scale_(n.grad[0]);
        n.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// video granularity

// K-frame abstract of one video: sampled query frames and their embeddings.
struct VideoAbstract {
    int segment_count = 8;
    std::vector<int> query_frames;
    std::vector<ad::Var> features;
};

struct AggregateResult {
    ad::Var r;         // [2C,H,W]: global-augmented representation
    ad::Var affinity;  // [WH, WH*(K-1)]
};

// Attends the query frame k over the concatenated other frames and augments
// its features with the attended content: r = [x', x].
inline AggregateResult aggregate_global(const std::vector<ad::Var>& features, int k) {
    const int K = static_cast<int>(features.size());
    if (K < 2) throw config_error("aggregate_global: needs at least 2 frames");
    if (k < 0 || k >= K) throw dimension_error("aggregate_global: bad query index");
    const Tensor& q = features[k].value();
    if (q.ndim() != 3) throw dimension_error("aggregate_global: expects [C,H,W] features");
    const int C = q.dim(0), H = q.dim(1), W = q.dim(2);

    std::vector<ad::Var> refs;
    refs.reserve(K - 1);
    for (int i = 0; i < K; ++i) {
        if (i == k) continue;
        if (!features[i].value().same_shape(q))
            throw dimension_error("aggregate_global: feature shape mismatch");
        refs.push_back(detail::flatten_feature(features[i]));
    }
    ad::Var ref_cat = ad::concat_cols(refs);  // [C, WH*(K-1)]
    ad::Var fq = detail::flatten_feature(features[k]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));
    ad::Var A = ad::softmax_cols(ad::scale(ad::matmul(fq, ref_cat, true, false), scale));
    ad::Var xprime = ad::reshape(ad::matmul(ref_cat, A, false, true), {C, H, W});
    return AggregateResult{ad::concat_channels(xprime, features[k]), A};
}

// Pooled unit-norm embedding of an augmented map. Mean pooling then a dot
// product equals the mean of the pairwise Gram matrix, which is what the
// instance-discrimination similarity wants.
inline ad::Var embed_global(const ad::Var& r) {
    return ad::l2_normalize(ad::spatial_mean(r));
}

// Per-video instance frames act as surrogate classes. Instance frames have no
// video context to aggregate, so their 2C embedding duplicates x.
struct InstanceBank {
    std::vector<ad::Var> embeddings;  // unit-norm [2C] vectors

    int size() const { return static_cast<int>(embeddings.size()); }
};

inline ad::Var instance_embedding(const ad::Var& x) {
    return embed_global(ad::concat_channels(x, x));
}

// Softmax over instances of temperature-scaled similarities.
inline ad::Var instance_probabilities(const ad::Var& query_embedding, const InstanceBank& bank,
                                      double temperature = 0.1) {
    if (bank.size() < 1) throw config_error("instance_probabilities: empty bank");
    const int d = query_embedding.value().size();
    ad::Var q = ad::reshape(query_embedding, {1, d});
    ad::Var B = ad::stack_rows(bank.embeddings);
    ad::Var logits = ad::scale(ad::matmul(q, B, false, true), 1.0 / temperature);
    return ad::reshape(ad::softmax_rows(logits), {bank.size()});
}

// Negative log likelihood over the N x N matrix of query-vs-instance
// probabilities (row n is query n's distribution): the diagonal should be
// likely, everything else unlikely. Probabilities are clamped by 1e-6.
inline ad::Var instance_nll(const ad::Var& P, double clamp = 1e-6) {
    const Tensor& p = P.value();
    if (p.ndim() != 2 || p.dim(0) != p.dim(1)) throw dimension_error("instance_nll: not square");
    const int N = p.dim(0);
    double loss = 0.0;
    for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
            const double pc = std::min(std::max(p.at(a, b), clamp), 1.0 - clamp);
            loss -= a == b ? std::log(pc) : std::log(1.0 - pc);
        }
    Tensor out({1});
    out[0] = loss;
    return ad::make_node(std::move(out), {P}, [clamp, N](ad::Node& n) {
        const Tensor& p = n.parents[0]->value;
        Tensor g({N, N});
        for (int a = 0; a < N; ++a)
            for (int b = 0; b < N; ++b) {
                const double v = p.at(a, b);
                if (v <= clamp || v >= 1.0 - clamp) continue;
                g.at(a, b) = n.grad[0] * (a == b ? -1.0 / v : 1.0 / (1.0 - v));
            }
        n.parents[0]->accumulate(g);
    });
}

// Eq-style batch loss: one query per video against the instance bank.
inline ad::Var global_loss(const std::vector<ad::Var>& query_embeddings, const InstanceBank& bank,
                           double temperature = 0.1) {
    const int N = static_cast<int>(query_embeddings.size());
    if (N < 1 || bank.size() != N)
        throw config_error("global_loss: need one query per bank instance");
    ad::Var Q = ad::stack_rows(query_embeddings);
    ad::Var B = ad::stack_rows(bank.embeddings);
    ad::Var P = ad::softmax_rows(ad::scale(ad::matmul(Q, B, false, true), 1.0 / temperature));
    return instance_nll(P);
}

}  // namespace uvos
