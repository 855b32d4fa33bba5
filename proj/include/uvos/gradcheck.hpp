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
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "uvos/autodiff.hpp"
#include "uvos/common.hpp"

// Central finite-difference verification of reverse-mode gradients.
namespace uvos {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;  // empty on success, diagnostic on failure
};

// Builds a scalar loss from differentiable leaves; called repeatedly with
// perturbed leaf values, so it must be a pure function of them.
using LossBuilder = std::function<ad::Var(const std::vector<ad::Var>&)>;

namespace detail {
inline std::vector<ad::Var> make_leaves(const std::vector<Tensor>& values) {
    std::vector<ad::Var> leaves;
    leaves.reserve(values.size());
    for (const auto& v : values) leaves.push_back(ad::param(v));
    return leaves;
}

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor>& values) {
    std::vector<ad::Var> leaves = make_leaves(values);
    ad::Var loss = build(leaves);
    if (loss.value().size() != 1) throw dimension_error("gradcheck: loss is not scalar");
    return loss.value()[0];
}
}  // namespace detail

// Compares the reverse-mode gradient of build(leaves) against central finite
// differences at up to max_coords_per_leaf coordinates per leaf (all of them
// when the leaf is small). A coordinate passes when
//   |analytic - numeric| <= rtol * max(|analytic|, |numeric|, floor).
inline CheckResult check_gradients(const std::string& name, const LossBuilder& build,
                                   const std::vector<Tensor>& leaf_values, double rtol = 1e-2,
                                   double h = 1e-3, int max_coords_per_leaf = 24,
                                   std::uint64_t seed = 7, double floor = 1e-3) {
    CheckResult result;
    result.name = name;

    std::vector<ad::Var> leaves = detail::make_leaves(leaf_values);
    ad::Var loss = build(leaves);
    if (loss.value().size() != 1) throw dimension_error("gradcheck: loss is not scalar");
    if (!std::isfinite(loss.value()[0])) {
        result.detail = "loss not finite at the base point";
        return result;
    }
    ad::backward(loss);

    Rng rng(seed);
    double worst_rel = 0.0;
    std::ostringstream worst;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        const Tensor& grad = leaves[l].grad();
        const int n = leaf_values[l].size();
        std::vector<int> coords;
        if (n <= max_coords_per_leaf) {
            for (int i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < max_coords_per_leaf; ++i) coords.push_back(rng.uniform_int(0, n - 1));
        }
        for (int c : coords) {
            std::vector<Tensor> perturbed = leaf_values;
            perturbed[l][c] = leaf_values[l][c] + h;
            const double up = detail::eval_loss(build, perturbed);
            perturbed[l][c] = leaf_values[l][c] - h;
            const double down = detail::eval_loss(build, perturbed);
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grad.empty() ? 0.0 : grad[c];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > worst_rel) {
                worst_rel = rel;
                worst.str("");
                worst << "leaf " << l << " coord " << c << ": analytic " << analytic
                      << ", numeric " << numeric << ", rel " << rel;
            }
        }
    }
    result.passed = worst_rel <= rtol;
    if (!result.passed) result.detail = worst.str();
    return result;
}

// Convenience wrapper asserting a named boolean invariant.
inline CheckResult check_that(const std::string& name, bool condition,
                              const std::string& detail_on_failure = "") {
    CheckResult r;
    r.name = name;
    r.passed = condition;
    if (!condition) r.detail = detail_on_failure.empty() ? "condition violated" : detail_on_failure;
    return r;
}

}  // namespace uvos
