// Differentiable primitives: 2-D convolution (cross-correlation), 2x2 max
// pooling, ReLU, fully connected and softmax cross-entropy. Convolution runs
// as im2col + GEMM; all ops are pure functions over immutable inputs.
#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "core/common.hpp"
#include "core/tensor.hpp"

namespace occ {

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;

    int out_extent(int in) const {
        return (in + 2 * padding - kernel) / stride + 1;
    }

    void validate(int in_h, int in_w) const {
        if (in_channels <= 0 || out_channels <= 0 || kernel <= 0 || stride <= 0 || padding < 0) {
            throw ShapeError("conv spec: all extents must be positive (stride " +
                             std::to_string(stride) + ", kernel " + std::to_string(kernel) + ")");
        }
        if (out_extent(in_h) < 1 || out_extent(in_w) < 1) {
            throw ShapeError("conv spec: output extent < 1 for input " + std::to_string(in_h) +
                             "x" + std::to_string(in_w) + " with kernel " + std::to_string(kernel) +
                             ", stride " + std::to_string(stride) + ", padding " +
                             std::to_string(padding));
        }
    }
};

namespace detail {

// C[m,n] = A[m,k] * B[k,n], row-major. The j loop is contiguous on B and C
// and vectorizes; i is unrolled 4-way to reuse B rows.
template <typename T>
void gemm_nn(int m, int k, int n, const T* A, const T* B, T* C) {
    std::memset(C, 0, sizeof(T) * static_cast<std::size_t>(m) * n);
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        T* c0 = C + static_cast<std::size_t>(i + 0) * n;
        T* c1 = C + static_cast<std::size_t>(i + 1) * n;
        T* c2 = C + static_cast<std::size_t>(i + 2) * n;
        T* c3 = C + static_cast<std::size_t>(i + 3) * n;
        for (int p = 0; p < k; ++p) {
            const T a0 = A[static_cast<std::size_t>(i + 0) * k + p];
            const T a1 = A[static_cast<std::size_t>(i + 1) * k + p];
            const T a2 = A[static_cast<std::size_t>(i + 2) * k + p];
            const T a3 = A[static_cast<std::size_t>(i + 3) * k + p];
            const T* b = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                c0[j] += a0 * b[j];
                c1[j] += a1 * b[j];
                c2[j] += a2 * b[j];
                c3[j] += a3 * b[j];
            }
        }
    }
    for (; i < m; ++i) {
        T* c = C + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T a = A[static_cast<std::size_t>(i) * k + p];
            const T* b = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                c[j] += a * b[j];
            }
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T: rows of both operands are contiguous dots.
// Eight explicit partial sums let the compiler vectorize the reduction
// without reassociating a serial chain.
template <typename T>
void gemm_nt(int m, int k, int n, const T* A, const T* B, T* C) {
    for (int i = 0; i < m; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * k;
        T* c = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* b = B + static_cast<std::size_t>(j) * k;
            T s0{}, s1{}, s2{}, s3{}, s4{}, s5{}, s6{}, s7{};
            int p = 0;
            for (; p + 8 <= k; p += 8) {
                s0 += a[p] * b[p];
                s1 += a[p + 1] * b[p + 1];
                s2 += a[p + 2] * b[p + 2];
                s3 += a[p + 3] * b[p + 3];
                s4 += a[p + 4] * b[p + 4];
                s5 += a[p + 5] * b[p + 5];
                s6 += a[p + 6] * b[p + 6];
                s7 += a[p + 7] * b[p + 7];
            }
            T acc = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
            for (; p < k; ++p) {
                acc += a[p] * b[p];
            }
            c[j] = acc;
        }
    }
}

// C[m,n] = A[k,m]^T * B[k,n]: accumulate scaled B rows into C rows.
template <typename T>
void gemm_tn(int m, int k, int n, const T* A, const T* B, T* C) {
    std::memset(C, 0, sizeof(T) * static_cast<std::size_t>(m) * n);
    for (int p = 0; p < k; ++p) {
        const T* a = A + static_cast<std::size_t>(p) * m;
        const T* b = B + static_cast<std::size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const T ai = a[i];
            if (ai == T{}) {
                continue;
            }
            T* c = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                c[j] += ai * b[j];
            }
        }
    }
}

// col[(c*k + kr)*k + kc, oy*ow + ox] = x[c, oy*s + kr - p, ox*s + kc - p], 0 outside.
// For stride 1 the valid span of each row is contiguous in the source.
template <typename T>
void im2col(const T* x, int channels, int h, int w, const ConvSpec& spec, int oh, int ow, T* col) {
    const int k = spec.kernel;
    const int s = spec.stride;
    const int p = spec.padding;
    for (int c = 0; c < channels; ++c) {
        const T* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
                T* row = col + (static_cast<std::size_t>(c) * k * k + kr * k + kc) *
                                   static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s + kr - p;
                    T* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(ow));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * w;
                    if (s == 1) {
                        // ix = ox + kc - p valid for ox in [lo, hi)
                        const int lo = std::max(0, p - kc);
                        const int hi = std::min(ow, w - kc + p);
                        if (lo > 0) {
                            std::memset(dst, 0, sizeof(T) * static_cast<std::size_t>(lo));
                        }
                        if (hi > lo) {
                            std::memcpy(dst + lo, src + lo + kc - p,
                                        sizeof(T) * static_cast<std::size_t>(hi - lo));
                        }
                        if (hi < ow) {
                            std::memset(dst + hi, 0, sizeof(T) * static_cast<std::size_t>(ow - hi));
                        }
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * s + kc - p;
                            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T{};
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, const ConvSpec& spec, int oh, int ow, T* x) {
    const int k = spec.kernel;
    const int s = spec.stride;
    const int p = spec.padding;
    std::memset(x, 0, sizeof(T) * static_cast<std::size_t>(channels) * h * w);
    for (int c = 0; c < channels; ++c) {
        T* xc = x + static_cast<std::size_t>(c) * h * w;
        for (int kr = 0; kr < k; ++kr) {
            for (int kc = 0; kc < k; ++kc) {
                const T* row = col + (static_cast<std::size_t>(c) * k * k + kr * k + kc) *
                                         static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s + kr - p;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    const T* src = row + static_cast<std::size_t>(oy) * ow;
                    T* dst = xc + static_cast<std::size_t>(iy) * w;
                    if (s == 1) {
                        const int lo = std::max(0, p - kc);
                        const int hi = std::min(ow, w - kc + p);
                        T* d = dst + lo + kc - p;
                        for (int ox = lo; ox < hi; ++ox) {
                            d[ox - lo] += src[ox];
                        }
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * s + kc - p;
                            if (ix >= 0 && ix < w) {
                                dst[ix] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
std::unique_ptr<T[]> scratch(std::size_t n) {
    return std::unique_ptr<T[]>(new T[n]);
}

}  // namespace detail

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& biases,
                     const ConvSpec& spec) {
    if (input.rank() != 3) {
        throw ShapeError("conv2d: input must be CxHxW, got " + shape_str(input.shape()));
    }
    if (input.extent(0) != spec.in_channels) {
        throw ShapeError("conv2d: input channels " + std::to_string(input.extent(0)) +
                         " != spec.in_channels " + std::to_string(spec.in_channels));
    }
    if (weights.rank() != 4 || weights.extent(0) != spec.out_channels ||
        weights.extent(1) != spec.in_channels || weights.extent(2) != spec.kernel ||
        weights.extent(3) != spec.kernel) {
        throw ShapeError("conv2d: weights " + shape_str(weights.shape()) + " != expected [" +
                         std::to_string(spec.out_channels) + "x" + std::to_string(spec.in_channels) +
                         "x" + std::to_string(spec.kernel) + "x" + std::to_string(spec.kernel) + "]");
    }
    if (biases.rank() != 1 || biases.extent(0) != spec.out_channels) {
        throw ShapeError("conv2d: biases " + shape_str(biases.shape()) + " != expected [" +
                         std::to_string(spec.out_channels) + "]");
    }
    spec.validate(input.extent(1), input.extent(2));
}

// Cross-correlation of input with each filter plus per-filter bias.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& biases,
                         const ConvSpec& spec) {
    check_conv_args(input, weights, biases, spec);
    const int h = input.extent(1);
    const int w = input.extent(2);
    const int oh = spec.out_extent(h);
    const int ow = spec.out_extent(w);
    const int ckk = spec.in_channels * spec.kernel * spec.kernel;
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;

    auto col = detail::scratch<T>(static_cast<std::size_t>(ckk) * cols);
    detail::im2col(input.data(), spec.in_channels, h, w, spec, oh, ow, col.get());

    Tensor<T> out({spec.out_channels, oh, ow});
    detail::gemm_nn(spec.out_channels, ckk, static_cast<int>(cols), weights.data(), col.get(),
                    out.data());
    for (int f = 0; f < spec.out_channels; ++f) {
        T* o = out.data() + static_cast<std::size_t>(f) * cols;
        const T b = biases[static_cast<std::size_t>(f)];
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] += b;
        }
    }
    ensure_finite(out, "conv2d_forward");
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> biases;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const Tensor<T>& grad_out, const ConvSpec& spec) {
    const int h = input.extent(1);
    const int w = input.extent(2);
    const int oh = spec.out_extent(h);
    const int ow = spec.out_extent(w);
    if (grad_out.rank() != 3 || grad_out.extent(0) != spec.out_channels ||
        grad_out.extent(1) != oh || grad_out.extent(2) != ow) {
        throw ShapeError("conv2d_backward: grad_out " + shape_str(grad_out.shape()) +
                         " != forward output [" + std::to_string(spec.out_channels) + "x" +
                         std::to_string(oh) + "x" + std::to_string(ow) + "]");
    }
    {
        Tensor<T> dummy_bias({spec.out_channels});
        check_conv_args(input, weights, dummy_bias, spec);
    }
    const int ckk = spec.in_channels * spec.kernel * spec.kernel;
    const std::size_t cols = static_cast<std::size_t>(oh) * ow;

    auto col = detail::scratch<T>(static_cast<std::size_t>(ckk) * cols);
    detail::im2col(input.data(), spec.in_channels, h, w, spec, oh, ow, col.get());

    ConvGrads<T> g{Tensor<T>({spec.in_channels, h, w}),
                   Tensor<T>({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
                   Tensor<T>({spec.out_channels})};

    // grad_biases[f] = sum of grad_out over channel f
    for (int f = 0; f < spec.out_channels; ++f) {
        const T* go = grad_out.data() + static_cast<std::size_t>(f) * cols;
        T acc{};
        for (std::size_t j = 0; j < cols; ++j) {
            acc += go[j];
        }
        g.biases[static_cast<std::size_t>(f)] = acc;
    }

    // grad_weights = grad_out [F,N] * col^T [N,CKK]
    detail::gemm_nt(spec.out_channels, static_cast<int>(cols), ckk, grad_out.data(), col.get(),
                    g.weights.data());

    // grad_col = W^T [CKK,F] * grad_out [F,N], scattered back with col2im
    auto gcol = detail::scratch<T>(static_cast<std::size_t>(ckk) * cols);
    detail::gemm_tn(ckk, spec.out_channels, static_cast<int>(cols), weights.data(),
                    grad_out.data(), gcol.get());
    detail::col2im(gcol.get(), spec.in_channels, h, w, spec, oh, ow, g.input.data());

    ensure_finite(g.input, "conv2d_backward");
    ensure_finite(g.weights, "conv2d_backward");
    ensure_finite(g.biases, "conv2d_backward");
    return g;
}

// Non-overlapping 2x2 max pooling. The mask stores the winning in-window
// position (0..3, row-major); ties go to the first position, so the backward
// pass routes each gradient to exactly one input.
template <typename T>
std::pair<Tensor<T>, Tensor<std::uint8_t>> maxpool2_forward(const Tensor<T>& input) {
    if (input.rank() != 3) {
        throw ShapeError("maxpool2: input must be CxHxW, got " + shape_str(input.shape()));
    }
    const int c = input.extent(0);
    const int h = input.extent(1);
    const int w = input.extent(2);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2: spatial extents must be even, got " +
                         std::to_string(h) + "x" + std::to_string(w));
    }
    const int oh = h / 2;
    const int ow = w / 2;
    Tensor<T> out({c, oh, ow});
    Tensor<std::uint8_t> mask({c, oh, ow});
    for (int ch = 0; ch < c; ++ch) {
        const T* in = input.data() + static_cast<std::size_t>(ch) * h * w;
        T* o = out.data() + static_cast<std::size_t>(ch) * oh * ow;
        std::uint8_t* m = mask.data() + static_cast<std::size_t>(ch) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const T* r0 = in + static_cast<std::size_t>(2 * oy) * w;
            const T* r1 = r0 + w;
            for (int ox = 0; ox < ow; ++ox) {
                const std::array<T, 4> v{r0[2 * ox], r0[2 * ox + 1], r1[2 * ox], r1[2 * ox + 1]};
                int best = 0;
                for (int i = 1; i < 4; ++i) {
                    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) {
                        best = i;
                    }
                }
                o[static_cast<std::size_t>(oy) * ow + ox] = v[static_cast<std::size_t>(best)];
                m[static_cast<std::size_t>(oy) * ow + ox] = static_cast<std::uint8_t>(best);
            }
        }
    }
    ensure_finite(out, "maxpool2_forward");
    return {std::move(out), std::move(mask)};
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<std::uint8_t>& mask, const Tensor<T>& grad_out) {
    if (!(mask.shape() == grad_out.shape())) {
        throw ShapeError("maxpool2_backward: mask " + shape_str(mask.shape()) + " != grad_out " +
                         shape_str(grad_out.shape()));
    }
    const int c = grad_out.extent(0);
    const int oh = grad_out.extent(1);
    const int ow = grad_out.extent(2);
    Tensor<T> gx({c, oh * 2, ow * 2});
    const int w = ow * 2;
    for (int ch = 0; ch < c; ++ch) {
        const T* go = grad_out.data() + static_cast<std::size_t>(ch) * oh * ow;
        const std::uint8_t* m = mask.data() + static_cast<std::size_t>(ch) * oh * ow;
        T* out = gx.data() + static_cast<std::size_t>(ch) * (oh * 2) * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int win = m[static_cast<std::size_t>(oy) * ow + ox];
                const int iy = 2 * oy + win / 2;
                const int ix = 2 * ox + win % 2;
                out[static_cast<std::size_t>(iy) * w + ix] = go[static_cast<std::size_t>(oy) * ow + ox];
            }
        }
    }
    ensure_finite(gx, "maxpool2_backward");
    return gx;
}

// max(0, x); the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        out[i] = input[i] > T{} ? input[i] : T{};
    }
    ensure_finite(out, "relu_forward");
    return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    if (!input.same_shape(grad_out)) {
        throw ShapeError("relu_backward: input " + shape_str(input.shape()) + " != grad_out " +
                         shape_str(grad_out.shape()));
    }
    Tensor<T> gx(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        gx[i] = input[i] > T{} ? grad_out[i] : T{};
    }
    ensure_finite(gx, "relu_backward");
    return gx;
}

// y = W x + b over the flattened input.
template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& biases) {
    const std::size_t in_dim = input.size();
    if (weights.rank() != 2 || static_cast<std::size_t>(weights.extent(1)) != in_dim) {
        throw ShapeError("fc_forward: weights " + shape_str(weights.shape()) +
                         " incompatible with flattened input length " + std::to_string(in_dim));
    }
    const int out_dim = weights.extent(0);
    if (biases.rank() != 1 || biases.extent(0) != out_dim) {
        throw ShapeError("fc_forward: biases " + shape_str(biases.shape()) + " != expected [" +
                         std::to_string(out_dim) + "]");
    }
    Tensor<T> out({out_dim});
    for (int o = 0; o < out_dim; ++o) {
        const T* wr = weights.data() + static_cast<std::size_t>(o) * in_dim;
        T acc = biases[static_cast<std::size_t>(o)];
        for (std::size_t i = 0; i < in_dim; ++i) {
            acc += wr[i] * input[i];
        }
        out[static_cast<std::size_t>(o)] = acc;
    }
    ensure_finite(out, "fc_forward");
    return out;
}

template <typename T>
struct FcGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> biases;
};

template <typename T>
FcGrads<T> fc_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out) {
    const std::size_t in_dim = input.size();
    const int out_dim = weights.extent(0);
    if (weights.rank() != 2 || static_cast<std::size_t>(weights.extent(1)) != in_dim) {
        throw ShapeError("fc_backward: weights " + shape_str(weights.shape()) +
                         " incompatible with input length " + std::to_string(in_dim));
    }
    if (grad_out.rank() != 1 || grad_out.extent(0) != out_dim) {
        throw ShapeError("fc_backward: grad_out " + shape_str(grad_out.shape()) + " != expected [" +
                         std::to_string(out_dim) + "]");
    }
    FcGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), Tensor<T>({out_dim})};
    for (int o = 0; o < out_dim; ++o) {
        const T go = grad_out[static_cast<std::size_t>(o)];
        const T* wr = weights.data() + static_cast<std::size_t>(o) * in_dim;
        T* gw = g.weights.data() + static_cast<std::size_t>(o) * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) {
            gw[i] = go * input[i];
            g.input[i] += go * wr[i];
        }
        g.biases[static_cast<std::size_t>(o)] = go;
    }
    ensure_finite(g.input, "fc_backward");
    ensure_finite(g.weights, "fc_backward");
    return g;
}

template <typename T>
struct SoftmaxResult {
    T loss;
    Tensor<T> probs;
    Tensor<T> grad_logits;
};

// Stable softmax + cross-entropy: probs via max-subtraction, loss via
// log-sum-exp so extreme logits cannot overflow.
template <typename T>
SoftmaxResult<T> softmax_xent(const Tensor<T>& logits, int label) {
    if (logits.rank() != 1 || logits.extent(0) < 2) {
        throw ShapeError("softmax_xent: logits must be rank-1 with >= 2 entries, got " +
                         shape_str(logits.shape()));
    }
    const int n = logits.extent(0);
    if (label < 0 || label >= n) {
        throw ShapeError("softmax_xent: label " + std::to_string(label) + " out of range [0," +
                         std::to_string(n) + ")");
    }
    T m = logits[0];
    for (int i = 1; i < n; ++i) {
        m = std::max(m, logits[static_cast<std::size_t>(i)]);
    }
    Tensor<T> probs({n});
    T se{};
    for (int i = 0; i < n; ++i) {
        probs[static_cast<std::size_t>(i)] = std::exp(logits[static_cast<std::size_t>(i)] - m);
        se += probs[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < n; ++i) {
        probs[static_cast<std::size_t>(i)] /= se;
    }
    const T loss = m + std::log(se) - logits[static_cast<std::size_t>(label)];
    Tensor<T> grad = probs;
    grad[static_cast<std::size_t>(label)] -= T{1};
    ensure_finite_scalar(loss, "softmax_xent");
    ensure_finite(grad, "softmax_xent");
    return {loss, std::move(probs), std::move(grad)};
}

}  // namespace occ
