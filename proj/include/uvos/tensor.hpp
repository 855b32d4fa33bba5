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
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "uvos/common.hpp"

namespace uvos {

// Dense row-major double tensor. Feature maps are stored [C][H][W] so the
// flattened per-channel view is directly the C x (H*W) matrix the affinity
// math wants; matrices are [rows][cols].
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
    }

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::size_t>(count(shape_)) != data_.size())
            throw dimension_error("Tensor: data size does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

    bool empty() const { return data_.empty(); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    int size() const { return static_cast<int>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

    // 2-D [rows][cols]
    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    // 3-D [c][y][x]
    double& at(int ch, int y, int x) {
        return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x];
    }
    double at(int ch, int y, int x) const {
        return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
    double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

    double min() const { return *std::min_element(data_.begin(), data_.end()); }
    double max() const { return *std::max_element(data_.begin(), data_.end()); }

    // argmax as flat index, first occurrence wins (row-major tie-break)
    int argmax() const {
        return static_cast<int>(std::max_element(data_.begin(), data_.end()) - data_.begin());
    }

    Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != size()) throw dimension_error("reshape: element count mismatch");
        return Tensor(std::move(shape), data_);
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    void add_(const Tensor& o) {
        if (!same_shape(o)) throw dimension_error("add_: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    }

    void scale_(double s) {
        for (auto& v : data_) v *= s;
    }

    static int count(const std::vector<int>& shape) {
        int n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

using EigenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<EigenMatrix>;
using EigenConstMap = Eigen::Map<const EigenMatrix>;

inline EigenConstMap as_matrix(const Tensor& t, int rows, int cols) {
    if (rows * cols != t.size()) throw dimension_error("as_matrix: element count mismatch");
    return EigenConstMap(t.data(), rows, cols);
}

inline EigenMap as_matrix(Tensor& t, int rows, int cols) {
    if (rows * cols != t.size()) throw dimension_error("as_matrix: element count mismatch");
    return EigenMap(t.data(), rows, cols);
}

// C = op(A) * op(B) for 2-D tensors, optional transposes.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
    if (a.ndim() != 2 || b.ndim() != 2) throw dimension_error("matmul: expects 2-D tensors");
    const int am = ta ? a.dim(1) : a.dim(0);
    const int ak = ta ? a.dim(0) : a.dim(1);
    const int bk = tb ? b.dim(1) : b.dim(0);
    const int bn = tb ? b.dim(0) : b.dim(1);
    if (ak != bk) throw dimension_error("matmul: inner dimensions differ");
    Tensor c({am, bn});
    auto A = as_matrix(a, a.dim(0), a.dim(1));
    auto B = as_matrix(b, b.dim(0), b.dim(1));
    auto C = as_matrix(c, am, bn);
    if (!ta && !tb)
        C.noalias() = A * B;
    else if (ta && !tb)
        C.noalias() = A.transpose() * B;
    else if (!ta && tb)
        C.noalias() = A * B.transpose();
    else
        C.noalias() = A.transpose() * B.transpose();
    return c;
}

}  // namespace uvos
