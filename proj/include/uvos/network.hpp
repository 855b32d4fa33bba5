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
#include <utility>
#include <vector>

#include "uvos/autodiff.hpp"
#include "uvos/common.hpp"
#include "uvos/core.hpp"
#include "uvos/tensor.hpp"

// The differentiable components: feature extractor phi (stride-4 fully
// convolutional), fore-background head rho, segmentation readout upsilon, and
// the geometric-transform regressor kappa.
namespace uvos {

struct BackboneConfig {
    int channels = 64;
    int stride = 4;  // fixed; all loss geometry assumes it
    int blocks = 4;
    int dilation = 2;  // last block
    std::uint64_t seed = 0;

    void validate() const {
        if (stride != 4) throw config_error("BackboneConfig: stride must be 4");
        if (blocks != 4) throw config_error("BackboneConfig: blocks must be 4");
        if (channels < 1) throw config_error("BackboneConfig: channels must be positive");
        if (dilation < 1) throw config_error("BackboneConfig: dilation must be positive");
    }
};

// Six-degree-of-freedom transform. Scales are exp-parameterized so the raw
// regressor output zero maps to the identity.
struct TransformParams {
    double tx = 0.0, ty = 0.0;
    double theta = 0.0;
    double sx = 1.0, sy = 1.0;
    double shear = 0.0;

    static TransformParams identity() { return TransformParams{}; }

    static TransformParams from_raw(const double raw[6]) {
        TransformParams t;
        t.tx = raw[0];
        t.ty = raw[1];
        t.theta = raw[2];
        t.sx = std::exp(raw[3]);
        t.sy = std::exp(raw[4]);
        t.shear = raw[5];
        return t;
    }
};

// Affine map: scale, shear, rotate about `center`, then translate.
inline Point apply_transform(const TransformParams& tau, Point p, Point center = {0.0, 0.0}) {
    const double ux = p.x - center.x;
    const double uy = p.y - center.y;
    const double vx = tau.sx * ux + tau.shear * tau.sy * uy;
    const double vy = tau.sy * uy;
    const double c = std::cos(tau.theta), s = std::sin(tau.theta);
    return Point{center.x + c * vx - s * vy + tau.tx, center.y + s * vx + c * vy + tau.ty};
}

namespace nn {

struct Conv2d {
    ad::Var weight;  // [Cout,Cin,kh,kw]
    ad::Var bias;    // [Cout]
    ad::ConvGeom geom;

    void init(int cin, int cout, int k, int stride, int dilation, Rng& rng, bool zero = false) {
        geom = ad::same_padding(k, k, stride, dilation);
        Tensor w({cout, cin, k, k});
        if (!zero) {
            const double std = std::sqrt(2.0 / (cin * k * k));
            for (int i = 0; i < w.size(); ++i) w[i] = rng.normal() * std;
        }
        weight = ad::param(std::move(w));
        bias = ad::param(Tensor({cout}));
    }

    ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, weight, bias, geom); }
};

struct BatchNorm {
    ad::Var gamma;
    ad::Var beta;
    ad::BatchNormState state;

    void init(int c) {
        gamma = ad::param(Tensor::full({c}, 1.0));
        beta = ad::param(Tensor({c}));
        state.running_mean = Tensor({c});
        state.running_var = Tensor::full({c}, 1.0);
    }

    ad::Var operator()(const ad::Var& x, bool training) {
        return ad::batchnorm(x, gamma, beta, &state, training);
    }
};

struct Linear {
    ad::Var weight;  // [out,in]
    ad::Var bias;    // [out]

    void init(int in, int out, Rng& rng, bool zero = false) {
        Tensor w({out, in});
        if (!zero) {
            const double std = std::sqrt(2.0 / in);
            for (int i = 0; i < w.size(); ++i) w[i] = rng.normal() * std;
        }
        weight = ad::param(std::move(w));
        bias = ad::param(Tensor({out}));
    }

    ad::Var operator()(const ad::Var& x) const {
        ad::Var col = ad::reshape(x, {x.value().size(), 1});
        ad::Var y = ad::reshape(ad::matmul(weight, col), {bias.value().size()});
        return ad::add(y, bias);
    }
};

}  // namespace nn

class Network {
public:
    // kappa_grid is the square feature-grid side the transform regressor is
    // built for (affinity matrices are (grid^2) x (grid^2)).
    explicit Network(BackboneConfig cfg, int kappa_grid = 16)
        : cfg_(cfg), kappa_grid_(kappa_grid) {
        cfg_.validate();
        if (kappa_grid < 4) throw config_error("Network: kappa grid below 4");
        Rng rng(cfg_.seed);
        const int C = cfg_.channels;
        const int strides[4] = {2, 2, 1, 1};
        const int dil[4] = {1, 1, 1, cfg_.dilation};
        int cin = 3;
        for (int i = 0; i < 4; ++i) {
            blocks_[i].conv.init(cin, C, 3, strides[i], dil[i], rng);
            blocks_[i].norm.init(C);
            cin = C;
        }
        rho_proj_.init(C, 1, 1, 1, 1, rng);
        ups_conv1_.init(2 * C, C, 3, 1, 1, rng);
        ups_conv2_.init(C, C, 3, 1, 1, rng);
        ups_proj_.init(C, 1, 1, 1, 1, rng);
        const int wh = kappa_grid_ * kappa_grid_;
        kap_conv1_.init(wh, 32, 3, 2, 1, rng);
        kap_conv2_.init(32, 32, 3, 2, 1, rng);
        kap_linear_.init(32, 6, rng, /*zero=*/true);  // identity at init
    }

    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    const BackboneConfig& config() const { return cfg_; }
    int channels() const { return cfg_.channels; }
    int kappa_grid() const { return kappa_grid_; }

    // phi: [3,H,W] -> [C,H/4,W/4]
    ad::Var phi(const ad::Var& frame, bool training) {
        const Tensor& x = frame.value();
        if (x.ndim() != 3 || x.dim(0) != 3) throw dimension_error("phi: expects [3,H,W]");
        if (x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0)
            throw dimension_error("phi: spatial dims must be divisible by 4");
        ad::Var h = frame;
        for (auto& b : blocks_) h = ad::relu(b.norm(b.conv(h), training));
        return h;
    }

    Tensor phi_eval(const Tensor& frame) { return phi(ad::constant(frame), false).value(); }

    // rho: [C,H,W] -> [H,W] foreground probability
    ad::Var rho(const ad::Var& x) const {
        const Tensor& v = x.value();
        ad::Var p = ad::sigmoid(rho_proj_(x));
        return ad::reshape(p, {v.dim(1), v.dim(2)});
    }

    // upsilon: [2C,H,W] -> [H,W] readout probability
    ad::Var upsilon(const ad::Var& r) const {
        const Tensor& v = r.value();
        if (v.ndim() != 3 || v.dim(0) != 2 * cfg_.channels)
            throw dimension_error("upsilon: expects 2C channels");
        ad::Var h = ad::relu(ups_conv1_(r));
        h = ad::relu(ups_conv2_(h));
        return ad::reshape(ad::sigmoid(ups_proj_(h)), {v.dim(1), v.dim(2)});
    }

    // kappa: (WH)x(WH) affinity -> raw 6-vector (zero = identity transform).
    // The affinity is read as a WH-channel image over the feature grid.
    ad::Var kappa_raw(const ad::Var& affinity) const {
        const Tensor& a = affinity.value();
        const int wh = kappa_grid_ * kappa_grid_;
        if (a.ndim() != 2 || a.dim(0) != wh || a.dim(1) != wh)
            throw dimension_error("kappa: affinity does not match the configured square grid");
        ad::Var grid = ad::reshape(affinity, {wh, kappa_grid_, kappa_grid_});
        ad::Var h = ad::relu(kap_conv1_(grid));
        h = ad::relu(kap_conv2_(h));
        return kap_linear_(ad::spatial_mean(h));
    }

    TransformParams kappa(const Tensor& affinity) const {
        Tensor raw = kappa_raw(ad::constant(affinity)).value();
        return TransformParams::from_raw(raw.data());
    }

    // Named parameters in a stable order; names are the checkpoint schema.
    std::vector<std::pair<std::string, ad::Var>> named_params() {
        std::vector<std::pair<std::string, ad::Var>> out;
        for (int i = 0; i < 4; ++i) {
            const std::string p = "phi.block" + std::to_string(i + 1);
            out.emplace_back(p + ".conv1.weight", blocks_[i].conv.weight);
            out.emplace_back(p + ".conv1.bias", blocks_[i].conv.bias);
            out.emplace_back(p + ".norm1.gamma", blocks_[i].norm.gamma);
            out.emplace_back(p + ".norm1.beta", blocks_[i].norm.beta);
        }
        out.emplace_back("rho.proj.weight", rho_proj_.weight);
        out.emplace_back("rho.proj.bias", rho_proj_.bias);
        out.emplace_back("upsilon.conv1.weight", ups_conv1_.weight);
        out.emplace_back("upsilon.conv1.bias", ups_conv1_.bias);
        out.emplace_back("upsilon.conv2.weight", ups_conv2_.weight);
        out.emplace_back("upsilon.conv2.bias", ups_conv2_.bias);
        out.emplace_back("upsilon.proj.weight", ups_proj_.weight);
        out.emplace_back("upsilon.proj.bias", ups_proj_.bias);
        out.emplace_back("kappa.conv1.weight", kap_conv1_.weight);
        out.emplace_back("kappa.conv1.bias", kap_conv1_.bias);
        out.emplace_back("kappa.conv2.weight", kap_conv2_.weight);
        out.emplace_back("kappa.conv2.bias", kap_conv2_.bias);
        out.emplace_back("kappa.linear.weight", kap_linear_.weight);
        out.emplace_back("kappa.linear.bias", kap_linear_.bias);
        return out;
    }

    // Non-learned running statistics, checkpointed alongside parameters.
    std::vector<std::pair<std::string, Tensor*>> named_buffers() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (int i = 0; i < 4; ++i) {
            const std::string p = "phi.block" + std::to_string(i + 1) + ".norm1";
            out.emplace_back(p + ".running_mean", &blocks_[i].norm.state.running_mean);
            out.emplace_back(p + ".running_var", &blocks_[i].norm.state.running_var);
        }
        return out;
    }

private:
    struct Block {
        nn::Conv2d conv;
        nn::BatchNorm norm;
    };

    BackboneConfig cfg_;
    int kappa_grid_;
    Block blocks_[4];
    nn::Conv2d rho_proj_;
    nn::Conv2d ups_conv1_, ups_conv2_, ups_proj_;
    nn::Conv2d kap_conv1_, kap_conv2_;
    nn::Linear kap_linear_;
};

}  // namespace uvos
