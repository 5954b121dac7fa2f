#ifndef DRDM_AUTODIFF_HPP
#define DRDM_AUTODIFF_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "drdm/tensor.hpp"

namespace drdm::ad {

// Reverse-mode tape. Nodes own their value; gradients are allocated lazily
// during backward(). Graphs are built per forward pass and dropped afterwards.

template <typename S>
struct Node {
    Tensor<S> val;
    Tensor<S> grad;  // allocated on demand
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // scatters this->grad into parents

    Tensor<S>& ensure_grad() {
        if (grad.v.empty()) grad = Tensor<S>::zeros(val.shape);
        return grad;
    }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<Mat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

template <typename S>
MatMap<S> as_mat(Tensor<S>& t, int rows, int cols) {
    return MatMap<S>(t.data(), rows, cols);
}
template <typename S>
ConstMatMap<S> as_mat(const Tensor<S>& t, int rows, int cols) {
    return ConstMatMap<S>(t.data(), rows, cols);
}

template <typename S>
Var<S> leaf(Tensor<S> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<S>>();
    n->val = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename S>
Var<S> make_node(Tensor<S> value, std::vector<Var<S>> parents,
                 std::function<void(Node<S>&)> backward) {
    auto n = std::make_shared<Node<S>>();
    n->val = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(backward);
    return n;
}

// ---------------------------------------------------------------------------
// elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    if (!a->val.same_shape(b->val)) throw invalid_input("add: shape mismatch");
    Tensor<S> out = a->val;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->val[i];
    return make_node<S>(std::move(out), {a, b}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    if (!a->val.same_shape(b->val)) throw invalid_input("sub: shape mismatch");
    Tensor<S> out = a->val;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b->val[i];
    return make_node<S>(std::move(out), {a, b}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    if (!a->val.same_shape(b->val)) throw invalid_input("mul: shape mismatch");
    Tensor<S> out = a->val;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b->val[i];
    return make_node<S>(std::move(out), {a, b}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b.val[i];
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a.val[i];
        }
    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
    Tensor<S> out = a->val;
    for (auto& x : out.v) x *= c;
    return make_node<S>(std::move(out), {a}, [c](Node<S>& n) {
        auto& a = *n.parents[0];
        if (!a.requires_grad) return;
        auto& g = a.ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * c;
    });
}

template <typename S>
Var<S> silu(const Var<S>& a) {
    Tensor<S> out = a->val;
    for (auto& x : out.v) {
        S s = S(1) / (S(1) + std::exp(-x));
        x = x * s;
    }
    return make_node<S>(std::move(out), {a}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        if (!a.requires_grad) return;
        auto& g = a.ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) {
            S x = a.val[i];
            S s = S(1) / (S(1) + std::exp(-x));
            g[i] += n.grad[i] * (s + x * s * (S(1) - s));
        }
    });
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
    Tensor<S> out = a->val;
    for (auto& x : out.v) x = S(1) / (S(1) + std::exp(-x));
    return make_node<S>(std::move(out), {a}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        if (!a.requires_grad) return;
        auto& g = a.ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) {
            S y = n.val[i];
            g[i] += n.grad[i] * y * (S(1) - y);
        }
    });
}

// ---------------------------------------------------------------------------
// shape-preserving plumbing

template <typename S>
Var<S> reshape(const Var<S>& a, std::vector<int> shape) {
    if (Tensor<S>::count(shape) != a->val.size()) throw invalid_input("reshape: size mismatch");
    Tensor<S> out = a->val;
    std::vector<int> old_shape = a->val.shape;
    out.shape = std::move(shape);
    return make_node<S>(std::move(out), {a}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        if (!a.requires_grad) return;
        auto& g = a.ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

// [m,n] -> [n,m]
template <typename S>
Var<S> transpose(const Var<S>& a) {
    if (a->val.rank() != 2) throw invalid_input("transpose: expects rank-2");
    int m = a->val.dim(0), k = a->val.dim(1);
    Tensor<S> out({k, m});
    as_mat(out, k, m) = as_mat(a->val, m, k).transpose();
    return make_node<S>(std::move(out), {a}, [m, k](Node<S>& n) {
        auto& a = *n.parents[0];
        if (!a.requires_grad) return;
        auto& g = a.ensure_grad();
        as_mat(g, m, k) += as_mat(n.grad, k, m).transpose();
    });
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw invalid_input("concat_rows: empty");
    int cols = parts[0]->val.dim(1);
    int rows = 0;
    for (const auto& p : parts) {
        if (p->val.rank() != 2 || p->val.dim(1) != cols)
            throw invalid_input("concat_rows: column mismatch");
        rows += p->val.dim(0);
    }
    Tensor<S> out({rows, cols});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->val.v.begin(), p->val.v.end(), out.v.begin() + off);
        off += p->val.size();
    }
    return make_node<S>(std::move(out), parts, [](Node<S>& n) {
        std::int64_t off = 0;
        for (auto& p : n.parents) {
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
            }
            off += p->val.size();
        }
    });
}

// channel concat of [C1,H,W] and [C2,H,W]
template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
    if (a->val.rank() != 3 || b->val.rank() != 3 || a->val.dim(1) != b->val.dim(1) ||
        a->val.dim(2) != b->val.dim(2))
        throw invalid_input("concat_channels: shape mismatch");
    Tensor<S> out({a->val.dim(0) + b->val.dim(0), a->val.dim(1), a->val.dim(2)});
    std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
    std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + a->val.size());
    return make_node<S>(std::move(out), {a, b}, [](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            std::int64_t off = a.val.size();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    if (a->val.rank() != 2 || b->val.rank() != 2 || a->val.dim(1) != b->val.dim(0))
        throw invalid_input("matmul: shape mismatch");
    int m = a->val.dim(0), k = a->val.dim(1), n2 = b->val.dim(1);
    Tensor<S> out({m, n2});
    as_mat(out, m, n2).noalias() = as_mat(a->val, m, k) * as_mat(b->val, k, n2);
    return make_node<S>(std::move(out), {a, b}, [m, k, n2](Node<S>& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        auto dy = as_mat(n.grad, m, n2);
        if (a.requires_grad)
            as_mat(a.ensure_grad(), m, k).noalias() += dy * as_mat(b.val, k, n2).transpose();
        if (b.requires_grad)
            as_mat(b.ensure_grad(), k, n2).noalias() += as_mat(a.val, m, k).transpose() * dy;
    });
}

// x[n,k] * W[k,m] + b[m]
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
    if (x->val.rank() != 2 || w->val.rank() != 2 || x->val.dim(1) != w->val.dim(0) ||
        b->val.size() != w->val.dim(1))
        throw invalid_input("linear: shape mismatch");
    int n = x->val.dim(0), k = x->val.dim(1), m = w->val.dim(1);
    Tensor<S> out({n, m});
    auto y = as_mat(out, n, m);
    y.noalias() = as_mat(x->val, n, k) * as_mat(w->val, k, m);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < m; ++c) out.at(r, c) += b->val[c];
    return make_node<S>(std::move(out), {x, w, b}, [n, k, m](Node<S>& nd) {
        auto& x = *nd.parents[0];
        auto& w = *nd.parents[1];
        auto& b = *nd.parents[2];
        auto dy = as_mat(nd.grad, n, m);
        if (x.requires_grad)
            as_mat(x.ensure_grad(), n, k).noalias() += dy * as_mat(w.val, k, m).transpose();
        if (w.requires_grad)
            as_mat(w.ensure_grad(), k, m).noalias() += as_mat(x.val, n, k).transpose() * dy;
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < m; ++c) g[c] += nd.grad[static_cast<std::int64_t>(r) * m + c];
        }
    });
}

// Row-wise softmax of [m,n], numerically stabilized.
template <typename S>
Var<S> softmax_rows(const Var<S>& a) {
    if (a->val.rank() != 2) throw invalid_input("softmax_rows: expects rank-2");
    int m = a->val.dim(0), n2 = a->val.dim(1);
    Tensor<S> out = a->val;
    for (int r = 0; r < m; ++r) {
        S* row = out.data() + static_cast<std::int64_t>(r) * n2;
        S mx = row[0];
        for (int c = 1; c < n2; ++c) mx = std::max(mx, row[c]);
        S sum = S(0);
        for (int c = 0; c < n2; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int c = 0; c < n2; ++c) row[c] /= sum;
    }
    return make_node<S>(std::move(out), {a}, [m, n2](Node<S>& nd) {
        auto& a = *nd.parents[0];
        if (!a.requires_grad) return;
        auto& g = a.ensure_grad();
        for (int r = 0; r < m; ++r) {
            const S* y = nd.val.data() + static_cast<std::int64_t>(r) * n2;
            const S* dy = nd.grad.data() + static_cast<std::int64_t>(r) * n2;
            S dot = S(0);
            for (int c = 0; c < n2; ++c) dot += y[c] * dy[c];
            S* dst = g.data() + static_cast<std::int64_t>(r) * n2;
            for (int c = 0; c < n2; ++c) dst[c] += y[c] * (dy[c] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// convolution (im2col + gemm)

namespace detail {
template <typename S>
void im2col(const Tensor<S>& x, int kh, int kw, int stride, int pad, int oh, int ow,
            Tensor<S>& cols) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    // cols: [C*kh*kw, oh*ow]
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                S* dst = cols.data() +
                         (static_cast<std::int64_t>(c) * kh * kw + ky * kw + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = S(0);
                        continue;
                    }
                    const S* src = x.data() + (static_cast<std::int64_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        dst[oy * ow + ox] = (ix < 0 || ix >= W) ? S(0) : src[ix];
                    }
                }
            }
}

template <typename S>
void col2im_accum(const Tensor<S>& cols, int kh, int kw, int stride, int pad, int oh, int ow,
                  Tensor<S>& dx) {
    const int C = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const S* src = cols.data() +
                               (static_cast<std::int64_t>(c) * kh * kw + ky * kw + kx) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    S* dst = dx.data() + (static_cast<std::int64_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * ow + ox];
                    }
                }
            }
}
}  // namespace detail

// x[C,H,W], w[O,C,kh,kw], b[O]
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int stride = 1, int pad = -1) {
    if (x->val.rank() != 3 || w->val.rank() != 4) throw invalid_input("conv2d: bad ranks");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    const int O = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
    if (w->val.dim(1) != C) throw invalid_input("conv2d: channel mismatch");
    if (b->val.size() != O) throw invalid_input("conv2d: bias mismatch");
    if (pad < 0) pad = kh / 2;
    const int oh = (H + 2 * pad - kh) / stride + 1;
    const int ow = (W + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw invalid_input("conv2d: empty output");

    const int K = C * kh * kw;
    Tensor<S> cols({K, oh * ow});
    detail::im2col(x->val, kh, kw, stride, pad, oh, ow, cols);
    Tensor<S> out({O, oh, ow});
    as_mat(out, O, oh * ow).noalias() = as_mat(w->val, O, K) * as_mat(cols, K, oh * ow);
    for (int o = 0; o < O; ++o) {
        S* dst = out.data() + static_cast<std::int64_t>(o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) dst[i] += b->val[o];
    }
    // The forward cols buffer is recomputed in backward to keep graph memory
    // proportional to activations, not im2col buffers.
    return make_node<S>(std::move(out), {x, w, b},
                        [stride, pad, kh, kw, oh, ow, K, O](Node<S>& n) {
                            auto& x = *n.parents[0];
                            auto& w = *n.parents[1];
                            auto& b = *n.parents[2];
                            auto dy = as_mat(n.grad, O, oh * ow);
                            if (w.requires_grad) {
                                Tensor<S> cols({K, oh * ow});
                                detail::im2col(x.val, kh, kw, stride, pad, oh, ow, cols);
                                as_mat(w.ensure_grad(), O, K).noalias() +=
                                    dy * as_mat(cols, K, oh * ow).transpose();
                            }
                            if (b.requires_grad) {
                                auto& g = b.ensure_grad();
                                for (int o = 0; o < O; ++o) {
                                    S s = S(0);
                                    const S* src = n.grad.data() +
                                                   static_cast<std::int64_t>(o) * oh * ow;
                                    for (int i = 0; i < oh * ow; ++i) s += src[i];
                                    g[o] += s;
                                }
                            }
                            if (x.requires_grad) {
                                Tensor<S> dcols({K, oh * ow});
                                as_mat(dcols, K, oh * ow).noalias() =
                                    as_mat(w.val, O, K).transpose() * dy;
                                detail::col2im_accum(dcols, kh, kw, stride, pad, oh, ow,
                                                     x.ensure_grad());
                            }
                        });
}

// ---------------------------------------------------------------------------
// spatial + channel helpers

template <typename S>
Var<S> upsample_nearest2x(const Var<S>& x) {
    if (x->val.rank() != 3) throw invalid_input("upsample: expects [C,H,W]");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    Tensor<S> out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = x->val.at(c, y / 2, xx / 2);
    return make_node<S>(std::move(out), {x}, [C, H, W](Node<S>& n) {
        auto& x = *n.parents[0];
        if (!x.requires_grad) return;
        auto& g = x.ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y)
                for (int xx = 0; xx < 2 * W; ++xx) g.at(c, y / 2, xx / 2) += n.grad.at(c, y, xx);
    });
}

// Global average pool [C,H,W] -> [C]
template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
    if (x->val.rank() != 3) throw invalid_input("gap: expects [C,H,W]");
    const int C = x->val.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(x->val.dim(1)) * x->val.dim(2);
    Tensor<S> out({C});
    for (int c = 0; c < C; ++c) {
        S s = S(0);
        const S* src = x->val.data() + c * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += src[i];
        out[c] = s / static_cast<S>(hw);
    }
    return make_node<S>(std::move(out), {x}, [C, hw](Node<S>& n) {
        auto& x = *n.parents[0];
        if (!x.requires_grad) return;
        auto& g = x.ensure_grad();
        for (int c = 0; c < C; ++c) {
            S gc = n.grad[c] / static_cast<S>(hw);
            S* dst = g.data() + c * hw;
            for (std::int64_t i = 0; i < hw; ++i) dst[i] += gc;
        }
    });
}

// x[C,H,W] scaled per channel by s[C]
template <typename S>
Var<S> mul_channels(const Var<S>& x, const Var<S>& s) {
    if (x->val.rank() != 3 || s->val.size() != x->val.dim(0))
        throw invalid_input("mul_channels: shape mismatch");
    const int C = x->val.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(x->val.dim(1)) * x->val.dim(2);
    Tensor<S> out = x->val;
    for (int c = 0; c < C; ++c) {
        S* dst = out.data() + c * hw;
        for (std::int64_t i = 0; i < hw; ++i) dst[i] *= s->val[c];
    }
    return make_node<S>(std::move(out), {x, s}, [C, hw](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& s = *n.parents[1];
        if (x.requires_grad) {
            auto& g = x.ensure_grad();
            for (int c = 0; c < C; ++c) {
                S* dst = g.data() + c * hw;
                const S* dy = n.grad.data() + c * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += dy[i] * s.val[c];
            }
        }
        if (s.requires_grad) {
            auto& g = s.ensure_grad();
            for (int c = 0; c < C; ++c) {
                S acc = S(0);
                const S* xv = x.val.data() + c * hw;
                const S* dy = n.grad.data() + c * hw;
                for (std::int64_t i = 0; i < hw; ++i) acc += dy[i] * xv[i];
                g[c] += acc;
            }
        }
    });
}

// x[C,H,W] + b[C] broadcast over space
template <typename S>
Var<S> add_channels(const Var<S>& x, const Var<S>& b) {
    if (x->val.rank() != 3 || b->val.size() != x->val.dim(0))
        throw invalid_input("add_channels: shape mismatch");
    const int C = x->val.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(x->val.dim(1)) * x->val.dim(2);
    Tensor<S> out = x->val;
    for (int c = 0; c < C; ++c) {
        S* dst = out.data() + c * hw;
        for (std::int64_t i = 0; i < hw; ++i) dst[i] += b->val[c];
    }
    return make_node<S>(std::move(out), {x, b}, [C, hw](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& b = *n.parents[1];
        if (x.requires_grad) {
            auto& g = x.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (int c = 0; c < C; ++c) {
                S acc = S(0);
                const S* dy = n.grad.data() + c * hw;
                for (std::int64_t i = 0; i < hw; ++i) acc += dy[i];
                g[c] += acc;
            }
        }
    });
}

// LayerNorm across channels at each spatial position, affine per channel.
template <typename S>
Var<S> channel_layernorm(const Var<S>& x, const Var<S>& gain, const Var<S>& bias,
                         S eps = S(1e-5)) {
    if (x->val.rank() != 3) throw invalid_input("layernorm: expects [C,H,W]");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    if (gain->val.size() != C || bias->val.size() != C)
        throw invalid_input("layernorm: affine mismatch");
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    Tensor<S> out({C, H, W});
    Tensor<S> mu({H, W}), rstd({H, W});
    for (std::int64_t p = 0; p < hw; ++p) {
        S m = S(0);
        for (int c = 0; c < C; ++c) m += x->val[c * hw + p];
        m /= static_cast<S>(C);
        S var = S(0);
        for (int c = 0; c < C; ++c) {
            S d = x->val[c * hw + p] - m;
            var += d * d;
        }
        var /= static_cast<S>(C);
        S r = S(1) / std::sqrt(var + eps);
        mu[p] = m;
        rstd[p] = r;
        for (int c = 0; c < C; ++c)
            out[c * hw + p] = (x->val[c * hw + p] - m) * r * gain->val[c] + bias->val[c];
    }
    auto mu_c = std::make_shared<Tensor<S>>(std::move(mu));
    auto rs_c = std::make_shared<Tensor<S>>(std::move(rstd));
    return make_node<S>(std::move(out), {x, gain, bias}, [C, hw, mu_c, rs_c](Node<S>& n) {
        auto& x = *n.parents[0];
        auto& gain = *n.parents[1];
        auto& bias = *n.parents[2];
        const Tensor<S>& mu = *mu_c;
        const Tensor<S>& rstd = *rs_c;
        if (gain.requires_grad) {
            auto& g = gain.ensure_grad();
            for (int c = 0; c < C; ++c) {
                S acc = S(0);
                for (std::int64_t p = 0; p < hw; ++p)
                    acc += n.grad[c * hw + p] * (x.val[c * hw + p] - mu[p]) * rstd[p];
                g[c] += acc;
            }
        }
        if (bias.requires_grad) {
            auto& g = bias.ensure_grad();
            for (int c = 0; c < C; ++c) {
                S acc = S(0);
                for (std::int64_t p = 0; p < hw; ++p) acc += n.grad[c * hw + p];
                g[c] += acc;
            }
        }
        if (x.requires_grad) {
            auto& g = x.ensure_grad();
            for (std::int64_t p = 0; p < hw; ++p) {
                S sum_d = S(0), sum_dx = S(0);
                for (int c = 0; c < C; ++c) {
                    S d = n.grad[c * hw + p] * gain.val[c];
                    S xh = (x.val[c * hw + p] - mu[p]) * rstd[p];
                    sum_d += d;
                    sum_dx += d * xh;
                }
                for (int c = 0; c < C; ++c) {
                    S d = n.grad[c * hw + p] * gain.val[c];
                    S xh = (x.val[c * hw + p] - mu[p]) * rstd[p];
                    g[c * hw + p] += rstd[p] * (d - sum_d / static_cast<S>(C) -
                                                xh * sum_dx / static_cast<S>(C));
                }
            }
        }
    });
}

// mean((a-b)^2) -> scalar [1]
template <typename S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
    if (!a->val.same_shape(b->val)) throw invalid_input("mse: shape mismatch");
    const std::int64_t n = a->val.size();
    S acc = S(0);
    for (std::int64_t i = 0; i < n; ++i) {
        S d = a->val[i] - b->val[i];
        acc += d * d;
    }
    Tensor<S> out({1});
    out[0] = acc / static_cast<S>(n);
    return make_node<S>(std::move(out), {a, b}, [n](Node<S>& nd) {
        auto& a = *nd.parents[0];
        auto& b = *nd.parents[1];
        S c = S(2) * nd.grad[0] / static_cast<S>(n);
        if (a.requires_grad) {
            auto& g = a.ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) g[i] += c * (a.val[i] - b.val[i]);
        }
        if (b.requires_grad) {
            auto& g = b.ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) g[i] -= c * (a.val[i] - b.val[i]);
        }
    });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    const std::int64_t n = a->val.size();
    Tensor<S> out({1});
    S acc = S(0);
    for (std::int64_t i = 0; i < n; ++i) acc += a->val[i];
    out[0] = acc / static_cast<S>(n);
    return make_node<S>(std::move(out), {a}, [n](Node<S>& nd) {
        auto& a = *nd.parents[0];
        if (!a.requires_grad) return;
        auto& g = a.ensure_grad();
        S c = nd.grad[0] / static_cast<S>(n);
        for (std::int64_t i = 0; i < n; ++i) g[i] += c;
    });
}

// ---------------------------------------------------------------------------
// backward driver

template <typename S>
void backward(const Var<S>& root) {
    if (root->val.size() != 1) throw invalid_input("backward: root must be scalar");
    // topological order
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<S>* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* nd = *it;
        if (nd->backward_fn && !nd->grad.v.empty()) nd->backward_fn(*nd);
    }
}

}  // namespace drdm::ad

#endif  // DRDM_AUTODIFF_HPP
