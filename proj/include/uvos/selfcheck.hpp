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
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "uvos/autodiff.hpp"
#include "uvos/checkpoint.hpp"
#include "uvos/common.hpp"
#include "uvos/core.hpp"
#include "uvos/gradcheck.hpp"
#include "uvos/imageops.hpp"
#include "uvos/inference.hpp"
#include "uvos/loss_frame_short.hpp"
#include "uvos/loss_long_video.hpp"
#include "uvos/metrics.hpp"
#include "uvos/network.hpp"
#include "uvos/priors.hpp"

// Built-in verification suites behind the `selfcheck` CLI subcommand:
// finite-difference checks of every loss gradient plus the normalization and
// structural invariants the rest of the system relies on.
namespace uvos {

namespace detail {
inline Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(shape);
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform_real(lo, hi);
    return t;
}

inline Tensor random_binary(const std::vector<int>& shape, Rng& rng) {
    Tensor t(shape);
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

// Guards a check body so a thrown exception becomes a failed result rather
// than aborting the whole suite.
template <typename Fn>
inline CheckResult guarded(const std::string& name, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        CheckResult r;
        r.name = name;
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
        return r;
    }
}
}  // namespace detail

// Finite-difference verification of each granularity loss and the composite
// differentiable paths feeding them.
inline std::vector<CheckResult> gradient_suite() {
    std::vector<CheckResult> out;
    Rng rng(2026);

    {  // Frame loss: sigmoid readout against a binary prior.
        Tensor logits = detail::random_tensor({6, 6}, rng);
        Tensor Q = detail::random_binary({6, 6}, rng);
        out.push_back(detail::guarded("grad/frame_loss", [&] {
            return check_gradients(
                "grad/frame_loss",
                [&](const std::vector<ad::Var>& l) { return frame_loss(ad::sigmoid(l[0]), Q); },
                {logits});
        }));
    }
    {  // Bootstrapped frame loss: convex blend of prior and stored prediction.
        Tensor logits = detail::random_tensor({6, 6}, rng);
        Tensor Q = detail::random_binary({6, 6}, rng);
        Tensor prev = detail::random_binary({6, 6}, rng);
        out.push_back(detail::guarded("grad/bootstrap_frame_loss", [&] {
            return check_gradients(
                "grad/bootstrap_frame_loss",
                [&](const std::vector<ad::Var>& l) {
                    return bootstrap_frame_loss(ad::sigmoid(l[0]), Q, prev, 0.05);
                },
                {logits});
        }));
    }
    {  // Short-term loss: correlation response against a Gaussian target.
        const int C = 4;
        Tensor kernel = detail::random_tensor({C, 2, 2}, rng);
        Tensor search = detail::random_tensor({C, 6, 6}, rng);
        GaussianTarget target = gaussian_target(Point{3.0, 3.0}, 2.0, 6, 6);
        out.push_back(detail::guarded("grad/short_term_loss", [&] {
            return check_gradients(
                "grad/short_term_loss",
                [&](const std::vector<ad::Var>& l) {
                    return ad::mse_mean(cross_correlate(l[0], l[1]), target.data);
                },
                {kernel, search});
        }));
    }
    {  // Long-term loss: gated affinity mass between two feature maps.
        const int C = 4, G = 3;
        Tensor xi = detail::random_tensor({C, G, G}, rng);
        Tensor xj = detail::random_tensor({C, G, G}, rng);
        const Tensor gate = consistency_gate(TransformParams::identity(), G, G);
        out.push_back(detail::guarded("grad/long_term_loss", [&] {
            return check_gradients(
                "grad/long_term_loss",
                [&](const std::vector<ad::Var>& l) {
                    MatchPair pair;
                    pair.affinity_ij = pairwise_affinity(l[0], l[1]);
                    pair.affinity_ji = pairwise_affinity(l[1], l[0]);
                    pair.gate_ij = gate;
                    pair.gate_ji = gate;
                    return long_term_loss(pair);
                },
                {xi, xj});
        }));
    }
    {  // Video-granularity loss: pooled embeddings against an instance bank.
        const int C = 4, G = 2, N = 3;
        std::vector<Tensor> leaves;
        for (int i = 0; i < N; ++i) leaves.push_back(detail::random_tensor({2 * C, G, G}, rng));
        for (int i = 0; i < N; ++i) leaves.push_back(detail::random_tensor({C, G, G}, rng));
        out.push_back(detail::guarded("grad/global_loss", [&] {
            return check_gradients(
                "grad/global_loss",
                [&](const std::vector<ad::Var>& l) {
                    std::vector<ad::Var> queries;
                    InstanceBank bank;
                    for (int i = 0; i < N; ++i) queries.push_back(embed_global(l[i]));
                    for (int i = 0; i < N; ++i)
                        bank.embeddings.push_back(instance_embedding(l[N + i]));
                    return global_loss(queries, bank, 0.1);
                },
                leaves);
        }));
    }
    {  // Instance discrimination probabilities: custom likelihood backward.
        Tensor logits = detail::random_tensor({3, 3}, rng);
        out.push_back(detail::guarded("grad/instance_nll", [&] {
            return check_gradients(
                "grad/instance_nll",
                [&](const std::vector<ad::Var>& l) {
                    return instance_nll(ad::softmax_rows(l[0]));
                },
                {logits});
        }));
    }
    {  // Backbone block composition: conv + batchnorm + relu into the readout.
        Tensor x = detail::random_tensor({3, 8, 8}, rng);
        Tensor w1 = detail::random_tensor({4, 3, 3, 3}, rng, -0.3, 0.3);
        Tensor b1 = detail::random_tensor({4}, rng, -0.1, 0.1);
        Tensor gamma = detail::random_tensor({4}, rng, 0.5, 1.5);
        Tensor beta = detail::random_tensor({4}, rng, -0.2, 0.2);
        Tensor w2 = detail::random_tensor({1, 4, 1, 1}, rng, -0.3, 0.3);
        Tensor b2 = detail::random_tensor({1}, rng, -0.1, 0.1);
        Tensor Q = detail::random_binary({4, 4}, rng);
        out.push_back(detail::guarded("grad/backbone_frame_path", [&] {
            return check_gradients(
                "grad/backbone_frame_path",
                [&](const std::vector<ad::Var>& l) {
                    ad::ConvGeom g1 = ad::same_padding(3, 3, 2);
                    ad::BatchNormState bn;
                    bn.running_mean = Tensor({4});
                    bn.running_var = Tensor({4});
                    bn.running_var.fill(1.0);
                    ad::Var h = ad::relu(ad::batchnorm(ad::conv2d(l[0], l[1], l[2], g1), l[3],
                                                       l[4], &bn, true));
                    ad::Var p = ad::sigmoid(
                        ad::reshape(ad::conv2d(h, l[5], l[6], ad::same_padding(1, 1)), {4, 4}));
                    return ad::bce_mean(p, Q, 1e-6);
                },
                {x, w1, b1, gamma, beta, w2, b2});
        }));
    }
    {  // Alignment regressor auxiliary: analytic transform-parameter Jacobian.
        const int G = 4;
        Rng arng(11);
        Tensor feat_a = detail::random_tensor({3, G, G}, arng);
        Tensor feat_b = detail::random_tensor({3, G, G}, arng);
        const Tensor affinity = pairwise_affinity(feat_a, feat_b);
        Tensor raw({6});
        raw[0] = 0.3;
        raw[1] = -0.2;
        raw[2] = 0.1;
        raw[3] = 0.05;
        raw[4] = -0.05;
        raw[5] = 0.02;
        out.push_back(detail::guarded("grad/kappa_soft_alignment", [&] {
            return check_gradients(
                "grad/kappa_soft_alignment",
                [&](const std::vector<ad::Var>& l) {
                    return kappa_soft_alignment(l[0], affinity, G, G);
                },
                {raw});
        }));
    }
    {  // Global aggregation path: affinity-weighted reference content.
        const int C = 4, G = 2, K = 4;
        std::vector<Tensor> leaves;
        for (int k = 0; k < K; ++k) leaves.push_back(detail::random_tensor({C, G, G}, rng));
        Tensor target(std::vector<int>{2 * C, G, G});
        out.push_back(detail::guarded("grad/aggregation_path", [&] {
            return check_gradients(
                "grad/aggregation_path",
                [&](const std::vector<ad::Var>& l) {
                    AggregateResult agg = aggregate_global(l, 1);
                    return ad::mse_mean(agg.r, target);
                },
                leaves);
        }));
    }
    return out;
}

// Normalization identities the losses and the propagation rule rely on.
inline std::vector<CheckResult> normalization_suite() {
    std::vector<CheckResult> out;
    Rng rng(515);

    {  // Affinity columns are probability distributions over reference cells.
        Tensor xi = detail::random_tensor({6, 4, 4}, rng);
        Tensor xj = detail::random_tensor({6, 4, 4}, rng);
        out.push_back(detail::guarded("norm/affinity_column_stochastic", [&] {
            const Tensor A = pairwise_affinity(xi, xj);
            double worst = 0.0;
            for (int c = 0; c < A.dim(1); ++c) {
                double s = 0.0;
                for (int r = 0; r < A.dim(0); ++r) s += A.at(r, c);
                worst = std::max(worst, std::abs(s - 1.0));
            }
            return check_that("norm/affinity_column_stochastic", worst <= 1e-5,
                              "worst column deviation " + std::to_string(worst));
        }));
    }
    {  // Per-query instance probabilities sum to one.
        out.push_back(detail::guarded("norm/instance_probabilities_sum", [&] {
            InstanceBank bank;
            for (int i = 0; i < 5; ++i)
                bank.embeddings.push_back(
                    ad::l2_normalize(ad::constant(detail::random_tensor({8}, rng))));
            ad::Var q = ad::l2_normalize(ad::constant(detail::random_tensor({8}, rng)));
            const Tensor P = instance_probabilities(q, bank, 0.1).value();
            double s = 0.0;
            for (int i = 0; i < P.size(); ++i) s += P[i];
            return check_that("norm/instance_probabilities_sum", std::abs(s - 1.0) <= 1e-6,
                              "sum " + std::to_string(s));
        }));
    }
    {  // Propagated label mass is conserved per cell.
        out.push_back(detail::guarded("norm/propagation_mass_conservation", [&] {
            Tensor xi = detail::random_tensor({6, 4, 4}, rng);
            Tensor xj = detail::random_tensor({6, 4, 4}, rng);
            const Tensor A = pairwise_affinity(xi, xj);
            const int wh = A.dim(0), L = 3;
            Tensor Y({wh, L});
            for (int r = 0; r < wh; ++r) {
                double s = 0.0;
                for (int l = 0; l < L; ++l) s += (Y.at(r, l) = rng.uniform_real(0.05, 1.0));
                for (int l = 0; l < L; ++l) Y.at(r, l) /= s;
            }
            const Tensor V = matmul(A, Y, true, false);
            double worst = 0.0;
            for (int r = 0; r < wh; ++r) {
                double s = 0.0;
                for (int l = 0; l < L; ++l) s += V.at(r, l);
                worst = std::max(worst, std::abs(s - 1.0));
            }
            return check_that("norm/propagation_mass_conservation", worst <= 1e-5,
                              "worst cell deviation " + std::to_string(worst));
        }));
    }
    {  // Pooled-embedding dot equals the mean of the cross-Gram matrix.
        out.push_back(detail::guarded("norm/pooled_gram_identity", [&] {
            const int C = 6, G = 4, WH = G * G;
            Tensor x = detail::random_tensor({C, G, G}, rng);
            Tensor y = detail::random_tensor({C, G, G}, rng);
            Tensor gx = ad::spatial_mean(ad::constant(x)).value();
            Tensor gy = ad::spatial_mean(ad::constant(y)).value();
            double pooled = 0.0;
            for (int c = 0; c < C; ++c) pooled += gx[c] * gy[c];
            const Tensor gram = matmul(x.reshaped({C, WH}), y.reshaped({C, WH}), true, false);
            double mean = 0.0;
            for (int i = 0; i < gram.size(); ++i) mean += gram[i];
            mean /= static_cast<double>(WH) * WH;
            return check_that("norm/pooled_gram_identity", std::abs(pooled - mean) <= 1e-5,
                              "pooled " + std::to_string(pooled) + " vs gram mean " +
                                  std::to_string(mean));
        }));
    }
    return out;
}

// Structural invariants: transforms, targets, propagation, serialization.
inline std::vector<CheckResult> invariant_suite() {
    std::vector<CheckResult> out = normalization_suite();
    Rng rng(909);

    out.push_back(detail::guarded("inv/transform_identity", [&] {
        const TransformParams id = TransformParams::identity();
        const Point p = apply_transform(id, Point{3.25, 7.5}, Point{8.0, 8.0});
        return check_that("inv/transform_identity",
                          std::abs(p.x - 3.25) < 1e-12 && std::abs(p.y - 7.5) < 1e-12);
    }));
    out.push_back(detail::guarded("inv/transform_quarter_turn", [&] {
        TransformParams t = TransformParams::identity();
        t.theta = M_PI / 2.0;
        const Point p = apply_transform(t, Point{9.0, 8.0}, Point{8.0, 8.0});
        return check_that("inv/transform_quarter_turn",
                          std::abs(p.x - 8.0) < 1e-9 && std::abs(p.y - 9.0) < 1e-9,
                          "got (" + std::to_string(p.x) + "," + std::to_string(p.y) + ")");
    }));
    out.push_back(detail::guarded("inv/gaussian_target_peak", [&] {
        const GaussianTarget t = gaussian_target(Point{5.0, 3.0}, 4.0, 8, 8);
        const int peak = t.data.argmax();
        return check_that("inv/gaussian_target_peak", peak == 3 * 8 + 5 && t.data[peak] <= 1.0,
                          "peak at flat index " + std::to_string(peak));
    }));
    out.push_back(detail::guarded("inv/correlation_response_range", [&] {
        Tensor kernel = detail::random_tensor({4, 2, 2}, rng);
        Tensor search = detail::random_tensor({4, 5, 5}, rng);
        const Tensor r = cross_correlate(ad::constant(kernel), ad::constant(search)).value();
        bool ok = r.dim(0) == 5 && r.dim(1) == 5;
        for (int i = 0; i < r.size(); ++i) ok = ok && r[i] > 0.0 && r[i] < 1.0;
        return check_that("inv/correlation_response_range", ok);
    }));
    out.push_back(detail::guarded("inv/otsu_bimodal", [&] {
        Tensor s({8, 8});
        for (int i = 0; i < s.size(); ++i) s[i] = i < 32 ? 0.1 : 0.9;
        const PriorMask m = binarize(SaliencyMap{s});
        int fg = 0;
        for (int i = 0; i < m.data.size(); ++i) fg += m.data[i] == 1.0 ? 1 : 0;
        return check_that("inv/otsu_bimodal", fg == 32, std::to_string(fg) + " foreground");
    }));
    out.push_back(detail::guarded("inv/saliency_centered_object", [&] {
        Tensor frame(std::vector<int>{3, 32, 32});
        frame.fill(0.1);
        for (int y = 11; y < 21; ++y)
            for (int x = 11; x < 21; ++x)
                for (int c = 0; c < 3; ++c) frame.at(c, y, x) = 0.9;
        const SaliencyMap sal = compute_saliency(frame);
        double inner = 0.0, border = 0.0;
        int ni = 0, nb = 0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                if (y >= 12 && y < 20 && x >= 12 && x < 20) inner += sal.data.at(y, x), ++ni;
                if (y < 2 || y >= 30 || x < 2 || x >= 30) border += sal.data.at(y, x), ++nb;
            }
        inner /= ni;
        border /= nb;
        return check_that("inv/saliency_centered_object", inner > 0.9 && border < 0.1,
                          "inner " + std::to_string(inner) + ", border " + std::to_string(border));
    }));
    out.push_back(detail::guarded("inv/distance_transform_bruteforce", [&] {
        Tensor m = detail::random_binary({8, 8}, rng);
        m[0] = 1.0;  // guarantee a seed pixel
        const Tensor d = distance_transform(m);
        double worst = 0.0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                double best = 1e30;
                for (int v = 0; v < 8; ++v)
                    for (int u = 0; u < 8; ++u)
                        if (m.at(v, u) != 0.0)
                            best = std::min(best, std::hypot(double(x - u), double(y - v)));
                worst = std::max(worst, std::abs(d.at(y, x) - best));
            }
        return check_that("inv/distance_transform_bruteforce", worst <= 1e-9,
                          "worst " + std::to_string(worst));
    }));
    out.push_back(detail::guarded("inv/boundary_self_agreement", [&] {
        Tensor m({16, 16});
        for (int y = 4; y < 12; ++y)
            for (int x = 6; x < 13; ++x) m.at(y, x) = 1.0;
        return check_that("inv/boundary_self_agreement",
                          std::abs(boundary_accuracy(m, m) - 1.0) < 1e-12);
    }));
    out.push_back(detail::guarded("inv/iou_conventions", [&] {
        Tensor a({4, 4}), b({4, 4});
        const bool empty_ok = mask_iou(a, b) == 1.0;
        a.at(1, 1) = 1.0;
        const bool disjoint_ok = mask_iou(a, b) == 0.0;
        b.at(1, 1) = 1.0;
        return check_that("inv/iou_conventions",
                          empty_ok && disjoint_ok && mask_iou(a, b) == 1.0);
    }));
    out.push_back(detail::guarded("inv/checkpoint_roundtrip", [&] {
        BackboneConfig bc;
        bc.channels = 8;
        bc.seed = 3;
        Network net(bc, 8);
        const auto path =
            (std::filesystem::temp_directory_path() / "uvos_selfcheck_roundtrip.ckpt").string();
        save_checkpoint(path, net);
        Network back = load_checkpoint(path);
        std::filesystem::remove(path);
        auto pa = net.named_params();
        auto pb = back.named_params();
        bool ok = pa.size() == pb.size();
        for (std::size_t i = 0; ok && i < pa.size(); ++i) {
            ok = pa[i].first == pb[i].first &&
                 pa[i].second.value().same_shape(pb[i].second.value());
            for (int j = 0; ok && j < pa[i].second.value().size(); ++j)
                ok = pa[i].second.value()[j] == pb[i].second.value()[j];
        }
        return check_that("inv/checkpoint_roundtrip", ok);
    }));
    out.push_back(detail::guarded("inv/identity_propagation", [&] {
        // With an injected identity affinity the first-frame annotation must
        // be reproduced exactly on every frame.
        const int S = 16;
        std::vector<Tensor> frames(3, Tensor(std::vector<int>{3, S, S}));
        Tensor first({S, S});
        for (int y = 4; y < 12; ++y)
            for (int x = 8; x < 16; ++x) first.at(y, x) = 1.0;
        const int wh = (S / 4) * (S / 4);
        AffinityProvider identity = [wh](const Tensor&, const Tensor&) {
            Tensor A({wh, wh});
            for (int i = 0; i < wh; ++i) A.at(i, i) = 1.0;
            return A;
        };
        BackboneConfig bc;
        bc.channels = 8;
        bc.seed = 5;
        Network net(bc, S / 4);
        const std::vector<Tensor> masks = ovos_propagate(net, frames, first, identity);
        bool ok = masks.size() == frames.size();
        for (const auto& m : masks)
            for (int i = 0; ok && i < m.size(); ++i) ok = m[i] == first[i];
        return check_that("inv/identity_propagation", ok);
    }));
    out.push_back(detail::guarded("inv/abstract_reference_indices", [&] {
        const std::vector<int> refs = abstract_reference_indices(24, 8);
        bool ok = refs.size() == 7 && refs.front() == 0 && refs.back() == 23;
        for (std::size_t i = 1; i < refs.size(); ++i) ok = ok && refs[i - 1] <= refs[i];
        return check_that("inv/abstract_reference_indices", ok);
    }));
    out.push_back(detail::guarded("inv/rng_determinism", [&] {
        Rng a(42), b(42);
        bool ok = true;
        for (int i = 0; i < 100; ++i) ok = ok && a.uniform() == b.uniform();
        return check_that("inv/rng_determinism", ok);
    }));
    return out;
}

// Everything the `selfcheck` subcommand runs.
inline std::vector<CheckResult> selfcheck_all() {
    std::vector<CheckResult> out = gradient_suite();
    std::vector<CheckResult> inv = invariant_suite();
    out.insert(out.end(), inv.begin(), inv.end());
    return out;
}

// Prints one line per check; returns true iff all passed.
inline bool report_checks(const std::vector<CheckResult>& results, std::ostream& os) {
    bool all = true;
    for (const auto& r : results) {
        os << (r.passed ? "PASS" : "FAIL") << "  " << r.name;
        if (!r.passed && !r.detail.empty()) os << "  (" << r.detail << ")";
        os << '\n';
        all = all && r.passed;
    }
    return all;
}

}  // namespace uvos
