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

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uvos/tensor.hpp"

// Reverse-mode tape over Tensor. Graphs are built per evaluation
// (define-by-run); parameters are long-lived leaves whose .grad accumulates
// until the optimizer consumes it.
namespace uvos::ad {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;

    void accumulate(const Tensor& g) {
        if (!requires_grad) return;
        if (grad.empty()) grad = Tensor::zeros_like(value);
        grad.add_(g);
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    Tensor& value_mut() { return n_->value; }
    const Tensor& grad() const { return n_->grad; }
    bool requires_grad() const { return n_->requires_grad; }

    void zero_grad() {
        if (!n_->grad.empty()) n_->grad.fill(0.0);
    }

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

inline Var constant(Tensor t) { return Var::leaf(std::move(t), false); }
inline Var param(Tensor t) { return Var::leaf(std::move(t), true); }

// Copies the value into a fresh constant leaf, cutting the tape.
inline Var detach(const Var& v) { return constant(v.value()); }

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) {
        rg = rg || p.node()->requires_grad;
        n->parents.push_back(p.node());
    }
    n->requires_grad = rg;
    if (rg) n->backward_fn = std::move(backward_fn);
    return Var(std::move(n));
}

// Runs reverse accumulation from `root` (any shape; seeded with ones).
inline void backward(const Var& root) {
    if (!root.node()->requires_grad) return;
    // iterative post-order DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    Node* r = root.node().get();
    if (r->grad.empty()) r->grad = Tensor::zeros_like(r->value);
    r->grad.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise and scalar ops

inline Var add(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) throw dimension_error("add: shape mismatch");
    Tensor out = a.value();
    out.add_(b.value());
    return make_node(std::move(out), {a, b}, [](Node& n) {
        n.parents[0]->accumulate(n.grad);
        n.parents[1]->accumulate(n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) throw dimension_error("sub: shape mismatch");
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        n.parents[0]->accumulate(n.grad);
        Tensor g = n.grad;
        g.scale_(-1.0);
        n.parents[1]->accumulate(g);
    });
}

inline Var mul(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) throw dimension_error("mul: shape mismatch");
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        Tensor ga = n.grad;
        for (int i = 0; i < ga.size(); ++i) ga[i] *= n.parents[1]->value[i];
        n.parents[0]->accumulate(ga);
        Tensor gb = n.grad;
        for (int i = 0; i < gb.size(); ++i) gb[i] *= n.parents[0]->value[i];
        n.parents[1]->accumulate(gb);
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out.scale_(s);
    return make_node(std::move(out), {a}, [s](Node& n) {
        Tensor g = n.grad;
        g.scale_(s);
        n.parents[0]->accumulate(g);
    });
}

inline Var relu(const Var& a) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor g = n.grad;
        const Tensor& x = n.parents[0]->value;
        for (int i = 0; i < g.size(); ++i)
            if (x[i] <= 0.0) g[i] = 0.0;
        n.parents[0]->accumulate(g);
    });
}

inline Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (int i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor g = n.grad;
        const Tensor& y = n.value;
        for (int i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
        n.parents[0]->accumulate(g);
    });
}

inline Var sum_all(const Var& a) {
    Tensor out({1});
    out[0] = a.value().sum();
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor g = Tensor::full(n.parents[0]->value.shape(), n.grad[0]);
        n.parents[0]->accumulate(g);
    });
}

inline Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    Tensor out({1});
    out[0] = a.value().sum() * inv;
    return make_node(std::move(out), {a}, [inv](Node& n) {
        Tensor g = Tensor::full(n.parents[0]->value.shape(), n.grad[0] * inv);
        n.parents[0]->accumulate(g);
    });
}

// sum(a .* mask), mask is a plain tensor
inline Var masked_sum(const Var& a, const Tensor& mask) {
    if (!a.value().same_shape(mask)) throw dimension_error("masked_sum: shape mismatch");
    Tensor out({1});
    double s = 0.0;
    for (int i = 0; i < mask.size(); ++i) s += a.value()[i] * mask[i];
    out[0] = s;
    return make_node(std::move(out), {a}, [mask](Node& n) {
        Tensor g = mask;
        g.scale_(n.grad[0]);
        n.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false) {
    Tensor out = uvos::matmul(a.value(), b.value(), ta, tb);
    return make_node(std::move(out), {a, b}, [ta, tb](Node& n) {
        const Tensor& A = n.parents[0]->value;
        const Tensor& B = n.parents[1]->value;
        const Tensor& G = n.grad;
        if (!ta && !tb) {
            n.parents[0]->accumulate(uvos::matmul(G, B, false, true));
            n.parents[1]->accumulate(uvos::matmul(A, G, true, false));
        } else if (ta && !tb) {
            n.parents[0]->accumulate(uvos::matmul(B, G, false, true));
            n.parents[1]->accumulate(uvos::matmul(A, G, false, false));
        } else if (!ta && tb) {
            n.parents[0]->accumulate(uvos::matmul(G, B, false, false));
            n.parents[1]->accumulate(uvos::matmul(G, A, true, false));
        } else {
            n.parents[0]->accumulate(uvos::matmul(B, G, true, true));
            n.parents[1]->accumulate(uvos::matmul(G, A, true, true));
        }
    });
}

inline Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(shape);
    return make_node(std::move(out), {a}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.reshaped(n.parents[0]->value.shape()));
    });
}

// Per-column softmax with max subtraction; rejects non-finite input.
inline Var softmax_cols(const Var& scores) {
    const Tensor& s = scores.value();
    if (s.ndim() != 2) throw dimension_error("softmax_cols: expects a matrix");
    if (!s.all_finite()) throw numeric_error("softmax_cols: non-finite scores");
    const int rows = s.dim(0), cols = s.dim(1);
    Tensor out({rows, cols});
    for (int c = 0; c < cols; ++c) {
        double mx = -1e300;
        for (int r = 0; r < rows; ++r) mx = std::max(mx, s.at(r, c));
        double z = 0.0;
        for (int r = 0; r < rows; ++r) {
            const double e = std::exp(s.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (int r = 0; r < rows; ++r) out.at(r, c) /= z;
    }
    return make_node(std::move(out), {scores}, [](Node& n) {
        const Tensor& y = n.value;
        const Tensor& g = n.grad;
        const int rows = y.dim(0), cols = y.dim(1);
        Tensor gs({rows, cols});
        for (int c = 0; c < cols; ++c) {
            double dot = 0.0;
            for (int r = 0; r < rows; ++r) dot += g.at(r, c) * y.at(r, c);
            for (int r = 0; r < rows; ++r) gs.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
        }
        n.parents[0]->accumulate(gs);
    });
}

inline Var softmax_rows(const Var& scores) {
    const Tensor& s = scores.value();
    if (s.ndim() != 2) throw dimension_error("softmax_rows: expects a matrix");
    if (!s.all_finite()) throw numeric_error("softmax_rows: non-finite scores");
    const int rows = s.dim(0), cols = s.dim(1);
    Tensor out({rows, cols});
    for (int r = 0; r < rows; ++r) {
        double mx = -1e300;
        for (int c = 0; c < cols; ++c) mx = std::max(mx, s.at(r, c));
        double z = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double e = std::exp(s.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < cols; ++c) out.at(r, c) /= z;
    }
    return make_node(std::move(out), {scores}, [](Node& n) {
        const Tensor& y = n.value;
        const Tensor& g = n.grad;
        const int rows = y.dim(0), cols = y.dim(1);
        Tensor gs({rows, cols});
        for (int r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += g.at(r, c) * y.at(r, c);
            for (int c = 0; c < cols; ++c) gs.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
        }
        n.parents[0]->accumulate(gs);
    });
}

// ---------------------------------------------------------------------------
// shape plumbing

// Concatenate [C, M_i] matrices along columns.
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw dimension_error("concat_cols: no inputs");
    const int rows = parts[0].value().dim(0);
    int total = 0;
    for (const auto& p : parts) {
        if (p.value().ndim() != 2 || p.value().dim(0) != rows)
            throw dimension_error("concat_cols: row mismatch");
        total += p.value().dim(1);
    }
    Tensor out({rows, total});
    std::vector<int> widths;
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.value().dim(1);
        widths.push_back(w);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < w; ++c) out.at(r, off + c) = p.value().at(r, c);
        off += w;
    }
    return make_node(std::move(out), parts, [widths, rows](Node& n) {
        int off = 0;
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            const int w = widths[i];
            Tensor g({rows, w});
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c) g.at(r, c) = n.grad.at(r, off + c);
            n.parents[i]->accumulate(g);
            off += w;
        }
    });
}

// [C1,H,W] ++ [C2,H,W] -> [C1+C2,H,W]; channel-major layout keeps this a copy.
inline Var concat_channels(const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    if (ta.ndim() != 3 || tb.ndim() != 3 || ta.dim(1) != tb.dim(1) || ta.dim(2) != tb.dim(2))
        throw dimension_error("concat_channels: spatial mismatch");
    Tensor out({ta.dim(0) + tb.dim(0), ta.dim(1), ta.dim(2)});
    std::copy(ta.data(), ta.data() + ta.size(), out.data());
    std::copy(tb.data(), tb.data() + tb.size(), out.data() + ta.size());
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const int na = n.parents[0]->value.size();
        const int nb = n.parents[1]->value.size();
        Tensor ga(n.parents[0]->value.shape());
        Tensor gb(n.parents[1]->value.shape());
        std::copy(n.grad.data(), n.grad.data() + na, ga.data());
        std::copy(n.grad.data() + na, n.grad.data() + na + nb, gb.data());
        n.parents[0]->accumulate(ga);
        n.parents[1]->accumulate(gb);
    });
}

// Stack 1-D vectors [D] into [N, D].
inline Var stack_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw dimension_error("stack_rows: no inputs");
    const int d = parts[0].value().size();
    Tensor out({static_cast<int>(parts.size()), d});
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].value().size() != d) throw dimension_error("stack_rows: length mismatch");
        std::copy(parts[i].value().data(), parts[i].value().data() + d,
                  out.data() + static_cast<std::size_t>(i) * d);
    }
    return make_node(std::move(out), parts, [d](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Tensor g(n.parents[i]->value.shape());
            std::copy(n.grad.data() + static_cast<std::size_t>(i) * d,
                      n.grad.data() + static_cast<std::size_t>(i + 1) * d, g.data());
            n.parents[i]->accumulate(g);
        }
    });
}

// [C,H,W] -> [C], mean over the spatial field.
inline Var spatial_mean(const Var& x) {
    const Tensor& v = x.value();
    if (v.ndim() != 3) throw dimension_error("spatial_mean: expects [C,H,W]");
    const int C = v.dim(0), m = v.dim(1) * v.dim(2);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += v[c * m + i];
        out[c] = s / m;
    }
    return make_node(std::move(out), {x}, [C, m](Node& n) {
        Tensor g(n.parents[0]->value.shape());
        for (int c = 0; c < C; ++c) {
            const double gv = n.grad[c] / m;
            for (int i = 0; i < m; ++i) g[c * m + i] = gv;
        }
        n.parents[0]->accumulate(g);
    });
}

inline Var l2_normalize(const Var& v, double eps = 1e-12) {
    const Tensor& x = v.value();
    double sq = eps;
    for (int i = 0; i < x.size(); ++i) sq += x[i] * x[i];
    const double norm = std::sqrt(sq);
    Tensor out = x;
    out.scale_(1.0 / norm);
    return make_node(std::move(out), {v}, [norm](Node& n) {
        const Tensor& x = n.parents[0]->value;
        const Tensor& g = n.grad;
        double dot = 0.0;
        for (int i = 0; i < x.size(); ++i) dot += g[i] * x[i];
        Tensor gx(x.shape());
        const double n3 = norm * norm * norm;
        for (int i = 0; i < x.size(); ++i) gx[i] = g[i] / norm - x[i] * dot / n3;
        n.parents[0]->accumulate(gx);
    });
}

// ---------------------------------------------------------------------------
// convolution

struct ConvGeom {
    int stride = 1;
    int dilation = 1;
    int pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;
};

inline ConvGeom same_padding(int kh, int kw, int stride = 1, int dilation = 1) {
    ConvGeom g;
    g.stride = stride;
    g.dilation = dilation;
    const int ph = dilation * (kh - 1);
    const int pw = dilation * (kw - 1);
    g.pad_top = ph / 2;
    g.pad_bottom = ph - g.pad_top;
    g.pad_left = pw / 2;
    g.pad_right = pw - g.pad_left;
    return g;
}

namespace detail {

inline Tensor im2col(const Tensor& x, int kh, int kw, const ConvGeom& g, int out_h, int out_w) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor cols({C * kh * kw, out_h * out_w});
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const int row = (c * kh + ky) * kw + kx;
                double* dst = cols.data() + static_cast<std::size_t>(row) * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad_top + ky * g.dilation;
                    for (int ox = 0; ox < out_w; ++ox, ++dst) {
                        const int ix = ox * g.stride - g.pad_left + kx * g.dilation;
                        *dst = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x.at(c, iy, ix) : 0.0;
                    }
                }
            }
    return cols;
}

inline void col2im_add(Tensor& dx, const Tensor& dcols, int kh, int kw, const ConvGeom& g,
                       int out_h, int out_w) {
    const int C = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const int row = (c * kh + ky) * kw + kx;
                const double* src = dcols.data() + static_cast<std::size_t>(row) * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad_top + ky * g.dilation;
                    if (iy < 0 || iy >= H) {
                        src += out_w;
                        continue;
                    }
                    for (int ox = 0; ox < out_w; ++ox, ++src) {
                        const int ix = ox * g.stride - g.pad_left + kx * g.dilation;
                        if (ix >= 0 && ix < W) dx.at(c, iy, ix) += *src;
                    }
                }
            }
}

}  // namespace detail

// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] -> [Cout,out_h,out_w]
inline Var conv2d(const Var& x, const Var& w, const Var& b, const ConvGeom& g) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.ndim() != 3 || wv.ndim() != 4) throw dimension_error("conv2d: bad ranks");
    if (xv.dim(0) != wv.dim(1)) throw dimension_error("conv2d: channel mismatch");
    const int H = xv.dim(1), W = xv.dim(2);
    const int Cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const int eff_h = g.dilation * (kh - 1) + 1;
    const int eff_w = g.dilation * (kw - 1) + 1;
    const int out_h = (H + g.pad_top + g.pad_bottom - eff_h) / g.stride + 1;
    const int out_w = (W + g.pad_left + g.pad_right - eff_w) / g.stride + 1;
    if (out_h < 1 || out_w < 1) throw dimension_error("conv2d: kernel exceeds padded input");

    auto cols = std::make_shared<Tensor>(detail::im2col(xv, kh, kw, g, out_h, out_w));
    Tensor wmat = wv.reshaped({Cout, wv.dim(1) * kh * kw});
    Tensor out2d = uvos::matmul(wmat, *cols);
    for (int co = 0; co < Cout; ++co) {
        const double bias = b.value()[co];
        double* row = out2d.data() + static_cast<std::size_t>(co) * out_h * out_w;
        for (int i = 0; i < out_h * out_w; ++i) row[i] += bias;
    }
    Tensor out = out2d.reshaped({Cout, out_h, out_w});

    return make_node(std::move(out), {x, w, b}, [cols, g, kh, kw, out_h, out_w](Node& n) {
        const Tensor& wv = n.parents[1]->value;
        const int Cout = wv.dim(0);
        Tensor g2d = n.grad.reshaped({Cout, out_h * out_w});
        // bias
        if (n.parents[2]->requires_grad) {
            Tensor db({Cout});
            for (int co = 0; co < Cout; ++co) {
                double s = 0.0;
                const double* row = g2d.data() + static_cast<std::size_t>(co) * out_h * out_w;
                for (int i = 0; i < out_h * out_w; ++i) s += row[i];
                db[co] = s;
            }
            n.parents[2]->accumulate(db);
        }
        // weights: dW = dOut * cols^T
        if (n.parents[1]->requires_grad) {
            Tensor dw = uvos::matmul(g2d, *cols, false, true);
            n.parents[1]->accumulate(dw.reshaped(wv.shape()));
        }
        // input: dcols = W^T * dOut, scattered back
        if (n.parents[0]->requires_grad) {
            Tensor wmat = wv.reshaped({Cout, wv.dim(1) * kh * kw});
            Tensor dcols = uvos::matmul(wmat, g2d, true, false);
            Tensor dx(n.parents[0]->value.shape());
            detail::col2im_add(dx, dcols, kh, kw, g, out_h, out_w);
            n.parents[0]->accumulate(dx);
        }
    });
}

// ---------------------------------------------------------------------------
// batch normalization (statistics over the spatial field of one input)

struct BatchNormState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    double momentum = 0.1;
    double eps = 1e-5;
};

inline Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState* state,
                     bool training) {
    const Tensor& xv = x.value();
    if (xv.ndim() != 3) throw dimension_error("batchnorm: expects [C,H,W]");
    const int C = xv.dim(0), m = xv.dim(1) * xv.dim(2);
    Tensor mean({C}), inv_std({C});
    if (training) {
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += xv[c * m + i];
            mean[c] = s / m;
            double v = 0.0;
            for (int i = 0; i < m; ++i) {
                const double d = xv[c * m + i] - mean[c];
                v += d * d;
            }
            v /= m;
            inv_std[c] = 1.0 / std::sqrt(v + state->eps);
            state->running_mean[c] =
                (1.0 - state->momentum) * state->running_mean[c] + state->momentum * mean[c];
            state->running_var[c] =
                (1.0 - state->momentum) * state->running_var[c] + state->momentum * v;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = state->running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(state->running_var[c] + state->eps);
        }
    }
    Tensor xhat(xv.shape());
    Tensor out(xv.shape());
    for (int c = 0; c < C; ++c) {
        const double g = gamma.value()[c], b = beta.value()[c];
        for (int i = 0; i < m; ++i) {
            const double xh = (xv[c * m + i] - mean[c]) * inv_std[c];
            xhat[c * m + i] = xh;
            out[c * m + i] = g * xh + b;
        }
    }
    auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
    auto istd_p = std::make_shared<Tensor>(std::move(inv_std));
    return make_node(std::move(out), {x, gamma, beta},
                     [xhat_p, istd_p, C, m, training](Node& n) {
                         const Tensor& g = n.grad;
                         const Tensor& gm = n.parents[1]->value;
                         Tensor dgamma({C}), dbeta({C});
                         for (int c = 0; c < C; ++c) {
                             double sg = 0.0, sb = 0.0;
                             for (int i = 0; i < m; ++i) {
                                 sg += g[c * m + i] * (*xhat_p)[c * m + i];
                                 sb += g[c * m + i];
                             }
                             dgamma[c] = sg;
                             dbeta[c] = sb;
                         }
                         if (n.parents[0]->requires_grad) {
                             Tensor dx(n.parents[0]->value.shape());
                             for (int c = 0; c < C; ++c) {
                                 const double istd = (*istd_p)[c];
                                 if (training) {
                                     // dxhat = g * gamma; fold the mean/var terms
                                     const double sum_dxhat = dbeta[c] * gm[c];
                                     const double sum_dxhat_xhat = dgamma[c] * gm[c];
                                     for (int i = 0; i < m; ++i) {
                                         const double dxhat = g[c * m + i] * gm[c];
                                         dx[c * m + i] =
                                             istd / m *
                                             (m * dxhat - sum_dxhat -
                                              (*xhat_p)[c * m + i] * sum_dxhat_xhat);
                                     }
                                 } else {
                                     for (int i = 0; i < m; ++i)
                                         dx[c * m + i] = g[c * m + i] * gm[c] * istd;
                                 }
                             }
                             n.parents[0]->accumulate(dx);
                         }
                         n.parents[1]->accumulate(dgamma);
                         n.parents[2]->accumulate(dbeta);
                     });
}

// ---------------------------------------------------------------------------
// losses

// Mean binary cross-entropy of predictions against a fixed target field.
// Predictions are clamped to [clamp, 1-clamp] before the logs; gradient is
// zero in the clamped region.
inline Var bce_mean(const Var& p, const Tensor& target, double clamp = 1e-6) {
    if (!p.value().same_shape(target)) throw dimension_error("bce_mean: shape mismatch");
    const Tensor& pv = p.value();
    const int nel = pv.size();
    double loss = 0.0;
    for (int i = 0; i < nel; ++i) {
        const double pc = std::min(std::max(pv[i], clamp), 1.0 - clamp);
        loss -= target[i] * std::log(pc) + (1.0 - target[i]) * std::log(1.0 - pc);
    }
    Tensor out({1});
    out[0] = loss / nel;
    return make_node(std::move(out), {p}, [target, clamp, nel](Node& n) {
        const Tensor& pv = n.parents[0]->value;
        Tensor g(pv.shape());
        const double s = n.grad[0] / nel;
        for (int i = 0; i < nel; ++i) {
            if (pv[i] <= clamp || pv[i] >= 1.0 - clamp) {
                g[i] = 0.0;
                continue;
            }
            g[i] = s * (-(target[i] / pv[i]) + (1.0 - target[i]) / (1.0 - pv[i]));
        }
        n.parents[0]->accumulate(g);
    });
}

inline Var mse_mean(const Var& a, const Tensor& target) {
    if (!a.value().same_shape(target)) throw dimension_error("mse_mean: shape mismatch");
    const Tensor& av = a.value();
    const int nel = av.size();
    double loss = 0.0;
    for (int i = 0; i < nel; ++i) {
        const double d = av[i] - target[i];
        loss += d * d;
    }
    Tensor out({1});
    out[0] = loss / nel;
    return make_node(std::move(out), {a}, [target, nel](Node& n) {
        const Tensor& av = n.parents[0]->value;
        Tensor g(av.shape());
        const double s = 2.0 * n.grad[0] / nel;
        for (int i = 0; i < nel; ++i) g[i] = s * (av[i] - target[i]);
        n.parents[0]->accumulate(g);
    });
}

}  // namespace uvos::ad
