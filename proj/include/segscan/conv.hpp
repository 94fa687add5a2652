#pragma once

#include <cstddef>

#include "segscan/errors.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Same-padded 2-d convolutions on (C, H, W) tensors with zero extension at
// the borders. Depthwise taps are (C, k, k); pointwise taps are (Cout, Cin).

enum class ConvMode { Depthwise, Pointwise };

template <class T>
Tensor<T> conv2d_depthwise(const Tensor<T>& x, const Tensor<T>& taps) {
    if (x.rank() != 3) throw DimensionError("conv2d input must be (C,H,W)");
    if (taps.rank() != 3 || taps.dim(0) != x.dim(0))
        throw DimensionError("depthwise taps must be (C,k,k) with matching channels");
    const std::size_t k = taps.dim(1);
    if (taps.dim(2) != k || k % 2 == 0) throw DimensionError("depthwise kernel must be odd square");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
    Tensor<T> y({C, H, W});
    for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x.data() + c * H * W;
        T* yc = y.data() + c * H * W;
        for (std::ptrdiff_t ky = -r; ky <= r; ++ky) {
            for (std::ptrdiff_t kx = -r; kx <= r; ++kx) {
                const T w = taps.at(c, static_cast<std::size_t>(ky + r), static_cast<std::size_t>(kx + r));
                if (w == T(0)) continue;
                for (std::size_t i = 0; i < H; ++i) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(i) + ky;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                    const std::size_t j0 = kx > 0 ? 0 : static_cast<std::size_t>(-kx);
                    const std::size_t j1 = kx > 0 ? W - static_cast<std::size_t>(kx) : W;
                    const T* row = xc + static_cast<std::size_t>(sy) * W;
                    T* dst = yc + i * W;
                    for (std::size_t j = j0; j < j1; ++j)
                        dst[j] += w * row[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + kx)];
                }
            }
        }
    }
    return y;
}

template <class T>
void conv2d_depthwise_backward(const Tensor<T>& x, const Tensor<T>& taps, const Tensor<T>& gy,
                               Tensor<T>& gx, Tensor<T>& gtaps) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t k = taps.dim(1);
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x.data() + c * H * W;
        const T* gc = gy.data() + c * H * W;
        T* gxc = gx.data() + c * H * W;
        for (std::ptrdiff_t ky = -r; ky <= r; ++ky) {
            for (std::ptrdiff_t kx = -r; kx <= r; ++kx) {
                const std::size_t ti = static_cast<std::size_t>(ky + r);
                const std::size_t tj = static_cast<std::size_t>(kx + r);
                const T w = taps.at(c, ti, tj);
                T acc = T(0);
                for (std::size_t i = 0; i < H; ++i) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(i) + ky;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                    const std::size_t j0 = kx > 0 ? 0 : static_cast<std::size_t>(-kx);
                    const std::size_t j1 = kx > 0 ? W - static_cast<std::size_t>(kx) : W;
                    const T* row = xc + static_cast<std::size_t>(sy) * W;
                    T* grow = gxc + static_cast<std::size_t>(sy) * W;
                    const T* g = gc + i * W;
#pragma omp simd reduction(+ : acc)
                    for (std::size_t j = j0; j < j1; ++j) {
                        const std::size_t s = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + kx);
                        acc += g[j] * row[s];
                        grow[s] += w * g[j];
                    }
                }
                gtaps.at(c, ti, tj) += acc;
            }
        }
    }
}

template <class T>
Tensor<T> conv2d_pointwise(const Tensor<T>& x, const Tensor<T>& taps, const Tensor<T>* bias = nullptr) {
    if (x.rank() != 3) throw DimensionError("conv2d input must be (C,H,W)");
    if (taps.rank() != 2 || taps.dim(1) != x.dim(0))
        throw DimensionError("pointwise taps must be (Cout,Cin) with Cin matching input channels");
    const std::size_t Cin = x.dim(0), HW = x.dim(1) * x.dim(2), Cout = taps.dim(0);
    Tensor<T> y({Cout, x.dim(1), x.dim(2)});
    for (std::size_t co = 0; co < Cout; ++co) {
        T* yc = y.data() + co * HW;
        if (bias) {
            const T b = (*bias)[co];
            for (std::size_t p = 0; p < HW; ++p) yc[p] = b;
        }
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const T w = taps.at(co, ci);
            if (w == T(0)) continue;
            const T* xc = x.data() + ci * HW;
            for (std::size_t p = 0; p < HW; ++p) yc[p] += w * xc[p];
        }
    }
    return y;
}

template <class T>
void conv2d_pointwise_backward(const Tensor<T>& x, const Tensor<T>& taps, const Tensor<T>& gy,
                               Tensor<T>& gx, Tensor<T>& gtaps, Tensor<T>* gbias = nullptr) {
    const std::size_t Cin = x.dim(0), HW = x.dim(1) * x.dim(2), Cout = taps.dim(0);
    for (std::size_t co = 0; co < Cout; ++co) {
        const T* g = gy.data() + co * HW;
        if (gbias) {
            T acc = T(0);
            for (std::size_t p = 0; p < HW; ++p) acc += g[p];
            (*gbias)[co] += acc;
        }
        for (std::size_t ci = 0; ci < Cin; ++ci) {
            const T w = taps.at(co, ci);
            const T* xc = x.data() + ci * HW;
            T* gxc = gx.data() + ci * HW;
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (std::size_t p = 0; p < HW; ++p) {
                acc += g[p] * xc[p];
                gxc[p] += w * g[p];
            }
            gtaps.at(co, ci) += acc;
        }
    }
}

// Spec-facing dispatcher.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& taps, ConvMode mode) {
    return mode == ConvMode::Depthwise ? conv2d_depthwise(x, taps) : conv2d_pointwise(x, taps);
}

// Dense k x k convolution with stride, used by the encoder/decoder blocks.
// Weights are (Cout, Cin, k, k); same padding of k/2, so stride 1 preserves
// H x W and stride 2 halves even extents. Implemented as im2col plus an
// axpy-style accumulation so the inner loops run over whole output planes.

// patch matrix: (Cin*k*k, Ho*Wo), zero where the window leaves the image
template <class T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t Ho,
                 std::size_t Wo) {
    const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
    Tensor<T> col({Cin * k * k, Ho * Wo});
    for (std::size_t ci = 0; ci < Cin; ++ci) {
        const T* xc = x.data() + ci * H * W;
        for (std::size_t kk = 0; kk < k * k; ++kk) {
            const std::ptrdiff_t ky = static_cast<std::ptrdiff_t>(kk / k) - r;
            const std::ptrdiff_t kx = static_cast<std::ptrdiff_t>(kk % k) - r;
            T* crow = col.data() + (ci * k * k + kk) * Ho * Wo;
            std::size_t ox0 = 0, ox1 = Wo;
            if (kx < 0)
                ox0 = static_cast<std::size_t>((-kx + static_cast<std::ptrdiff_t>(stride) - 1) /
                                               static_cast<std::ptrdiff_t>(stride));
            while (ox1 > ox0 &&
                   static_cast<std::ptrdiff_t>((ox1 - 1) * stride) + kx >= static_cast<std::ptrdiff_t>(W))
                --ox1;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride) + ky;
                T* dst = crow + oy * Wo;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                const T* src = xc + static_cast<std::size_t>(sy) * W;
                for (std::size_t ox = ox0; ox < ox1; ++ox)
                    dst[ox] = src[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox * stride) + kx)];
            }
        }
    }
    return col;
}

template <class T>
Tensor<T> conv2d_dense_from_col(const Tensor<T>& col, const Tensor<T>& w, const Tensor<T>& bias,
                                std::size_t Ho, std::size_t Wo) {
    const std::size_t M = col.dim(0), P = col.dim(1), Cout = w.dim(0);
    Tensor<T> y({Cout, Ho, Wo});
    for (std::size_t co = 0; co < Cout; ++co) {
        T* yc = y.data() + co * P;
        const T b = bias[co];
        for (std::size_t p = 0; p < P; ++p) yc[p] = b;
        const T* wrow = w.data() + co * M;
        for (std::size_t m = 0; m < M; ++m) {
            const T ww = wrow[m];
            if (ww == T(0)) continue;
            const T* crow = col.data() + m * P;
#pragma omp simd
            for (std::size_t p = 0; p < P; ++p) yc[p] += ww * crow[p];
        }
    }
    return y;
}

template <class T>
Tensor<T> conv2d_dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                       std::size_t stride = 1, Tensor<T>* col_cache = nullptr) {
    const std::size_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t k = w.dim(2);
    if (w.dim(1) != Cin) throw DimensionError("dense conv channel mismatch");
    const std::size_t Ho = (H + 2 * (k / 2) - k) / stride + 1;
    const std::size_t Wo = (W + 2 * (k / 2) - k) / stride + 1;
    Tensor<T> col = im2col(x, k, stride, Ho, Wo);
    auto y = conv2d_dense_from_col(col, w, bias, Ho, Wo);
    if (col_cache) *col_cache = std::move(col);
    return y;
}

// scatter-add of the patch-matrix gradient back onto the image
template <class T>
void col2im_add(const Tensor<T>& gcol, std::size_t k, std::size_t stride, std::size_t Ho,
                std::size_t Wo, Tensor<T>& gx) {
    const std::size_t Cin = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
    for (std::size_t ci = 0; ci < Cin; ++ci) {
        T* gxc = gx.data() + ci * H * W;
        for (std::size_t kk = 0; kk < k * k; ++kk) {
            const std::ptrdiff_t ky = static_cast<std::ptrdiff_t>(kk / k) - r;
            const std::ptrdiff_t kx = static_cast<std::ptrdiff_t>(kk % k) - r;
            const T* crow = gcol.data() + (ci * k * k + kk) * Ho * Wo;
            std::size_t ox0 = 0, ox1 = Wo;
            if (kx < 0)
                ox0 = static_cast<std::size_t>((-kx + static_cast<std::ptrdiff_t>(stride) - 1) /
                                               static_cast<std::ptrdiff_t>(stride));
            while (ox1 > ox0 &&
                   static_cast<std::ptrdiff_t>((ox1 - 1) * stride) + kx >= static_cast<std::ptrdiff_t>(W))
                --ox1;
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy * stride) + ky;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                T* grow = gxc + static_cast<std::size_t>(sy) * W;
                const T* g = crow + oy * Wo;
                if (stride == 1) {
#pragma omp simd
                    for (std::size_t ox = ox0; ox < ox1; ++ox)
                        grow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox) + kx)] += g[ox];
                } else {
                    for (std::size_t ox = ox0; ox < ox1; ++ox)
                        grow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ox * stride) + kx)] += g[ox];
                }
            }
        }
    }
}

// col is the patch matrix cached by the forward pass (rebuilt when absent)
template <class T>
void conv2d_dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                           std::size_t stride, Tensor<T>& gx, Tensor<T>& gw, Tensor<T>& gbias,
                           const Tensor<T>* col_cache = nullptr) {
    const std::size_t Cout = w.dim(0), k = w.dim(2);
    const std::size_t Ho = gy.dim(1), Wo = gy.dim(2), P = Ho * Wo;
    const std::size_t M = w.dim(1) * k * k;
    Tensor<T> col_local;
    const Tensor<T>* col = col_cache;
    if (!col || col->numel() != M * P) {
        col_local = im2col(x, k, stride, Ho, Wo);
        col = &col_local;
    }
    Tensor<T> gcol({M, P});
    for (std::size_t co = 0; co < Cout; ++co) {
        const T* g = gy.data() + co * P;
        T bacc = T(0);
#pragma omp simd reduction(+ : bacc)
        for (std::size_t p = 0; p < P; ++p) bacc += g[p];
        gbias[co] += bacc;
        const T* wrow = w.data() + co * M;
        T* gwrow = gw.data() + co * M;
        for (std::size_t m = 0; m < M; ++m) {
            const T* crow = col->data() + m * P;
            T* gcrow = gcol.data() + m * P;
            const T ww = wrow[m];
            T acc = T(0);
#pragma omp simd reduction(+ : acc)
            for (std::size_t p = 0; p < P; ++p) {
                acc += g[p] * crow[p];
                gcrow[p] += ww * g[p];
            }
            gwrow[m] += acc;
        }
    }
    col2im_add(gcol, k, stride, Ho, Wo, gx);
}

}  // namespace segscan
