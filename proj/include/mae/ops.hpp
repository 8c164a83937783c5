#pragma once

#include <cmath>
#include <limits>

#include "mae/box.hpp"
#include "mae/tensor.hpp"

namespace mae {

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return Tensor::make_op("add", a.shape(), std::move(out), {a, b},
        [](detail::Node& n) {
            for (std::size_t i = 0; i < n.size(); ++i) {
                n.inputs[0]->grad[i] += n.grad[i];
                n.inputs[1]->grad[i] += n.grad[i];
            }
        });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    return Tensor::make_op("scale", a.shape(), std::move(out), {a},
        [s](detail::Node& n) {
            for (std::size_t i = 0; i < n.size(); ++i) n.inputs[0]->grad[i] += s * n.grad[i];
        });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    return Tensor::make_op("relu", a.shape(), std::move(out), {a},
        [](detail::Node& n) {
            // subgradient at 0 is 0
            for (std::size_t i = 0; i < n.size(); ++i)
                if (n.inputs[0]->value[i] > 0.0) n.inputs[0]->grad[i] += n.grad[i];
        });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
    return Tensor::make_op("sigmoid", a.shape(), std::move(out), {a},
        [](detail::Node& n) {
            for (std::size_t i = 0; i < n.size(); ++i) {
                double y = n.value[i];
                n.inputs[0]->grad[i] += y * (1.0 - y) * n.grad[i];
            }
        });
}

inline void require_binary(const Tensor& mask, const char* who) {
    for (double v : mask.values())
        if (v != 0.0 && v != 1.0)
            throw std::invalid_argument(std::string(who) + ": mask must be binary");
}

// Single-channel binary mask broadcast across all feature channels.
inline Tensor mul_mask(const Tensor& x, const Tensor& mask) {
    if (x.shape().size() != 3 || mask.shape().size() != 3 || mask.shape()[0] != 1)
        throw std::invalid_argument("mul_mask: expects CxHxW input and 1xHxW mask");
    if (x.shape()[1] != mask.shape()[1] || x.shape()[2] != mask.shape()[2])
        throw std::invalid_argument("mul_mask: spatial mismatch");
    require_binary(mask, "mul_mask");
    const int C = x.shape()[0];
    const std::size_t hw = x.size() / C;
    std::vector<double> out(x.size());
    for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i)
            out[c * hw + i] = x.values()[c * hw + i] * mask.values()[i];
    return Tensor::make_op("mul_mask", x.shape(), std::move(out), {x, mask},
        [C, hw](detail::Node& n) {
            for (int c = 0; c < C; ++c)
                for (std::size_t i = 0; i < hw; ++i)
                    n.inputs[0]->grad[c * hw + i] += n.grad[c * hw + i] * n.inputs[1]->value[i];
        });
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty list");
    const auto& s0 = parts[0].shape();
    int ctotal = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != s0.size())
            throw std::invalid_argument("concat_channels: rank mismatch");
        if (s0.size() == 3 &&
            (p.shape()[1] != s0[1] || p.shape()[2] != s0[2]))
            throw std::invalid_argument("concat_channels: spatial mismatch");
        ctotal += p.shape()[0];
    }
    std::vector<int> shape = s0;
    shape[0] = ctotal;
    std::vector<double> out;
    out.reserve(detail::shape_count(shape));
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return Tensor::make_op("concat_channels", std::move(shape), std::move(out), parts,
        [](detail::Node& n) {
            std::size_t off = 0;
            for (auto& in : n.inputs) {
                for (std::size_t i = 0; i < in->value.size(); ++i)
                    in->grad[i] += n.grad[off + i];
                off += in->value.size();
            }
        });
}

inline Tensor slice_channels(const Tensor& x, int c0, int c1) {
    if (c0 < 0 || c1 <= c0 || c1 > x.shape()[0])
        throw std::invalid_argument("slice_channels: bad range");
    const std::size_t stride = x.size() / x.shape()[0];
    std::vector<int> shape = x.shape();
    shape[0] = c1 - c0;
    std::vector<double> out(x.values().begin() + c0 * stride,
                            x.values().begin() + c1 * stride);
    return Tensor::make_op("slice_channels", std::move(shape), std::move(out), {x},
        [c0, stride](detail::Node& n) {
            for (std::size_t i = 0; i < n.size(); ++i)
                n.inputs[0]->grad[c0 * stride + i] += n.grad[i];
        });
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation over a CxHxW input
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int stride = 1, int pad = 0) {
    if (x.shape().size() != 3 || w.shape().size() != 4)
        throw std::invalid_argument("conv2d: expects CxHxW input and OxCxKhxKw weights");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != C) throw std::invalid_argument("conv2d: channel mismatch");
    if (bias.shape() != std::vector<int>{O}) throw std::invalid_argument("conv2d: bias mismatch");
    if (kh % 2 == 0 || kw % 2 == 0) throw std::invalid_argument("conv2d: kernel extents must be odd");
    if (pad < 0 || stride < 1) throw std::invalid_argument("conv2d: bad stride/pad");
    if ((H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0)
        throw std::invalid_argument("conv2d: non-integral output extent");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;

    std::vector<double> out(static_cast<std::size_t>(O) * Ho * Wo);
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    for (int o = 0; o < O; ++o) {
        double b = bias.values()[o];
        double* orow = out.data() + static_cast<std::size_t>(o) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) orow[i] = b;
        for (int c = 0; c < C; ++c) {
            const double* xc = xv + static_cast<std::size_t>(c) * H * W;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double wk = wv[((static_cast<std::size_t>(o) * C + c) * kh + ky) * kw + kx];
                    if (wk == 0.0) continue;
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* xrow = xc + static_cast<std::size_t>(iy) * W;
                        double* orow2 = orow + static_cast<std::size_t>(oy) * Wo;
                        for (int ox = 0; ox < Wo; ++ox) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            orow2[ox] += wk * xrow[ix];
                        }
                    }
                }
            }
        }
    }

    auto bw = [C, H, W, O, kh, kw, Ho, Wo, stride, pad](detail::Node& n) {
        auto& xn = *n.inputs[0];
        auto& wn = *n.inputs[1];
        auto& bn = *n.inputs[2];
        for (int o = 0; o < O; ++o) {
            const double* grow = n.grad.data() + static_cast<std::size_t>(o) * Ho * Wo;
            double gb = 0.0;
            for (int i = 0; i < Ho * Wo; ++i) gb += grow[i];
            bn.grad[o] += gb;
            for (int c = 0; c < C; ++c) {
                const double* xc = xn.value.data() + static_cast<std::size_t>(c) * H * W;
                double* dxc = xn.grad.data() + static_cast<std::size_t>(c) * H * W;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        std::size_t widx = ((static_cast<std::size_t>(o) * C + c) * kh + ky) * kw + kx;
                        double wk = wn.value[widx];
                        double gw = 0.0;
                        for (int oy = 0; oy < Ho; ++oy) {
                            int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            const double* xrow = xc + static_cast<std::size_t>(iy) * W;
                            double* dxrow = dxc + static_cast<std::size_t>(iy) * W;
                            const double* grow2 = grow + static_cast<std::size_t>(oy) * Wo;
                            for (int ox = 0; ox < Wo; ++ox) {
                                int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                gw += grow2[ox] * xrow[ix];
                                dxrow[ix] += grow2[ox] * wk;
                            }
                        }
                        wn.grad[widx] += gw;
                    }
                }
            }
        }
    };
    return Tensor::make_op("conv2d", {O, Ho, Wo}, std::move(out), {x, w, bias}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Batch normalization (per-channel over the spatial extent)
// ---------------------------------------------------------------------------

struct BatchNormState {
    Tensor gamma;               // per-channel affine, trainable
    Tensor beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double epsilon = 1e-5;
    double momentum = 0.1;
    bool training = true;

    static BatchNormState make(int channels, double epsilon = 1e-5, double momentum = 0.1) {
        BatchNormState s;
        s.gamma = Tensor::from({channels}, std::vector<double>(channels, 1.0), true);
        s.beta = Tensor::zeros({channels}, true);
        s.running_mean.assign(channels, 0.0);
        s.running_var.assign(channels, 1.0);
        s.epsilon = epsilon;
        s.momentum = momentum;
        return s;
    }
    int channels() const { return gamma.shape()[0]; }
};

inline Tensor batchnorm2d(const Tensor& x, BatchNormState& state) {
    if (x.shape().size() != 3) throw std::invalid_argument("batchnorm2d: expects CxHxW");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    if (C != state.channels()) throw std::invalid_argument("batchnorm2d: channel mismatch");
    const int N = H * W;
    if (N == 0) throw std::invalid_argument("batchnorm2d: empty spatial extent");
    const double eps = state.epsilon;

    std::vector<double> out(x.size());
    if (!state.training) {
        for (int c = 0; c < C; ++c) {
            double inv = 1.0 / std::sqrt(state.running_var[c] + eps);
            double g = state.gamma.values()[c], b = state.beta.values()[c];
            double m = state.running_mean[c];
            for (int i = 0; i < N; ++i) {
                std::size_t idx = static_cast<std::size_t>(c) * N + i;
                out[idx] = g * (x.values()[idx] - m) * inv + b;
            }
        }
        return Tensor::make_op("batchnorm2d.eval", x.shape(), std::move(out),
            {x, state.gamma, state.beta},
            [C, N, eps, rm = state.running_mean, rv = state.running_var](detail::Node& n) {
                for (int c = 0; c < C; ++c) {
                    double inv = 1.0 / std::sqrt(rv[c] + eps);
                    double g = n.inputs[1]->value[c];
                    double gg = 0.0, gb = 0.0;
                    for (int i = 0; i < N; ++i) {
                        std::size_t idx = static_cast<std::size_t>(c) * N + i;
                        double go = n.grad[idx];
                        n.inputs[0]->grad[idx] += go * g * inv;
                        gg += go * (n.inputs[0]->value[idx] - rm[c]) * inv;
                        gb += go;
                    }
                    n.inputs[1]->grad[c] += gg;
                    n.inputs[2]->grad[c] += gb;
                }
            });
    }

    // train mode: batch statistics over HxW, differentiable through them
    std::vector<double> mean(C), var(C), inv_std(C);
    for (int c = 0; c < C; ++c) {
        double m = 0.0;
        for (int i = 0; i < N; ++i) m += x.values()[static_cast<std::size_t>(c) * N + i];
        m /= N;
        double v = 0.0;
        for (int i = 0; i < N; ++i) {
            double d = x.values()[static_cast<std::size_t>(c) * N + i] - m;
            v += d * d;
        }
        v /= N;
        mean[c] = m;
        var[c] = v;
        inv_std[c] = 1.0 / std::sqrt(v + eps);
        state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
        state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * v;
        double g = state.gamma.values()[c], b = state.beta.values()[c];
        for (int i = 0; i < N; ++i) {
            std::size_t idx = static_cast<std::size_t>(c) * N + i;
            out[idx] = g * (x.values()[idx] - m) * inv_std[c] + b;
        }
    }
    return Tensor::make_op("batchnorm2d.train", x.shape(), std::move(out),
        {x, state.gamma, state.beta},
        [C, N, mean, inv_std](detail::Node& n) {
            for (int c = 0; c < C; ++c) {
                double g = n.inputs[1]->value[c];
                double sum_go = 0.0, sum_go_xhat = 0.0;
                for (int i = 0; i < N; ++i) {
                    std::size_t idx = static_cast<std::size_t>(c) * N + i;
                    double xhat = (n.inputs[0]->value[idx] - mean[c]) * inv_std[c];
                    sum_go += n.grad[idx];
                    sum_go_xhat += n.grad[idx] * xhat;
                }
                n.inputs[1]->grad[c] += sum_go_xhat;
                n.inputs[2]->grad[c] += sum_go;
                for (int i = 0; i < N; ++i) {
                    std::size_t idx = static_cast<std::size_t>(c) * N + i;
                    double xhat = (n.inputs[0]->value[idx] - mean[c]) * inv_std[c];
                    n.inputs[0]->grad[idx] +=
                        g * inv_std[c] / N * (N * n.grad[idx] - sum_go - xhat * sum_go_xhat);
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pooling / cropping
// ---------------------------------------------------------------------------

// Per-channel spatial max. Gradient routes to the first argmax cell
// (lowest linear index) per channel.
inline Tensor global_max_pool(const Tensor& x) {
    if (x.shape().size() != 3) throw std::invalid_argument("global_max_pool: expects CxHxW");
    const int C = x.shape()[0];
    const int N = x.shape()[1] * x.shape()[2];
    if (N == 0) throw std::invalid_argument("global_max_pool: empty spatial extent");
    std::vector<double> out(C);
    std::vector<int> argmax(C);
    for (int c = 0; c < C; ++c) {
        const double* xc = x.values().data() + static_cast<std::size_t>(c) * N;
        int best = 0;
        for (int i = 1; i < N; ++i)
            if (xc[i] > xc[best]) best = i;
        out[c] = xc[best];
        argmax[c] = best;
    }
    return Tensor::make_op("global_max_pool", {C}, std::move(out), {x},
        [N, argmax](detail::Node& n) {
            for (std::size_t c = 0; c < argmax.size(); ++c)
                n.inputs[0]->grad[c * N + argmax[c]] += n.grad[c];
        });
}

// 2x2 average pool with stride 2. Used for downsampling stages: a stride-2
// conv with an odd kernel can never hit an exactly integral output extent on
// an even input, so downsampling is done by stride-1 conv followed by this.
inline Tensor avg_pool2(const Tensor& x) {
    if (x.shape().size() != 3) throw std::invalid_argument("avg_pool2: expects CxHxW");
    const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("avg_pool2: spatial extent must be even");
    const int Ho = H / 2, Wo = W / 2;
    std::vector<double> out(static_cast<std::size_t>(C) * Ho * Wo);
    for (int c = 0; c < C; ++c) {
        const double* xc = x.values().data() + static_cast<std::size_t>(c) * H * W;
        double* oc = out.data() + static_cast<std::size_t>(c) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                const double* p = xc + 2 * oy * W + 2 * ox;
                oc[oy * Wo + ox] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
            }
    }
    return Tensor::make_op("avg_pool2", {C, Ho, Wo}, std::move(out), {x},
        [C, H, W, Ho, Wo](detail::Node& n) {
            for (int c = 0; c < C; ++c) {
                double* gx = n.inputs[0]->grad.data() + static_cast<std::size_t>(c) * H * W;
                const double* go = n.grad.data() + static_cast<std::size_t>(c) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        double g = 0.25 * go[oy * Wo + ox];
                        double* p = gx + 2 * oy * W + 2 * ox;
                        p[0] += g;
                        p[1] += g;
                        p[W] += g;
                        p[W + 1] += g;
                    }
            }
        });
}

// RoIAlign with one bilinear sample at each output bin center. Box is given
// in image coordinates and mapped to the feature grid by uniform scaling,
// half-pixel aligned (pixel p covers [p, p+1), center p+0.5).
inline Tensor roi_align_crop(const Tensor& feature, const Box& box,
                             int image_w, int image_h, int out_h = 14, int out_w = 14) {
    if (feature.shape().size() != 3) throw std::invalid_argument("roi_align_crop: expects CxHxW");
    const int C = feature.shape()[0], H = feature.shape()[1], W = feature.shape()[2];
    Box b = box.clipped(image_w, image_h);
    if (!b.valid()) throw std::invalid_argument("roi_align_crop: degenerate box after clipping");
    const double sx = static_cast<double>(W) / image_w;
    const double sy = static_cast<double>(H) / image_h;
    const double fx1 = b.x1 * sx, fy1 = b.y1 * sy;
    const double bw = b.width() * sx / out_w;
    const double bh = b.height() * sy / out_h;

    struct Sample {
        int i00, i01, i10, i11;
        double w00, w01, w10, w11;
    };
    std::vector<Sample> samples(static_cast<std::size_t>(out_h) * out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            double u = fx1 + (ox + 0.5) * bw - 0.5;  // pixel-index space
            double v = fy1 + (oy + 0.5) * bh - 0.5;
            u = std::clamp(u, 0.0, static_cast<double>(W - 1));
            v = std::clamp(v, 0.0, static_cast<double>(H - 1));
            int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
            int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            double fu = u - x0, fv = v - y0;
            Sample& s = samples[static_cast<std::size_t>(oy) * out_w + ox];
            s.i00 = y0 * W + x0;
            s.i01 = y0 * W + x1;
            s.i10 = y1 * W + x0;
            s.i11 = y1 * W + x1;
            s.w00 = (1 - fu) * (1 - fv);
            s.w01 = fu * (1 - fv);
            s.w10 = (1 - fu) * fv;
            s.w11 = fu * fv;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(C) * out_h * out_w);
    for (int c = 0; c < C; ++c) {
        const double* fc = feature.values().data() + static_cast<std::size_t>(c) * H * W;
        double* oc = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const Sample& s = samples[i];
            oc[i] = s.w00 * fc[s.i00] + s.w01 * fc[s.i01] + s.w10 * fc[s.i10] + s.w11 * fc[s.i11];
        }
    }
    return Tensor::make_op("roi_align_crop", {C, out_h, out_w}, std::move(out), {feature},
        [C, H, W, samples](detail::Node& n) {
            const std::size_t hw = samples.size();
            for (int c = 0; c < C; ++c) {
                double* dfc = n.inputs[0]->grad.data() + static_cast<std::size_t>(c) * H * W;
                const double* gc = n.grad.data() + static_cast<std::size_t>(c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const auto& s = samples[i];
                    dfc[s.i00] += s.w00 * gc[i];
                    dfc[s.i01] += s.w01 * gc[i];
                    dfc[s.i10] += s.w10 * gc[i];
                    dfc[s.i11] += s.w11 * gc[i];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Dense layers and reductions
// ---------------------------------------------------------------------------

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 1 || w.shape().size() != 2)
        throw std::invalid_argument("linear: expects flat input and DoutxDin weights");
    const int Din = x.shape()[0];
    const int Dout = w.shape()[0];
    if (w.shape()[1] != Din || b.shape() != std::vector<int>{Dout})
        throw std::invalid_argument("linear: dimension mismatch");
    std::vector<double> out(Dout);
    for (int o = 0; o < Dout; ++o) {
        double acc = b.values()[o];
        const double* wr = w.values().data() + static_cast<std::size_t>(o) * Din;
        for (int i = 0; i < Din; ++i) acc += wr[i] * x.values()[i];
        out[o] = acc;
    }
    return Tensor::make_op("linear", {Dout}, std::move(out), {x, w, b},
        [Din, Dout](detail::Node& n) {
            for (int o = 0; o < Dout; ++o) {
                double go = n.grad[o];
                n.inputs[2]->grad[o] += go;
                const double* wr = n.inputs[1]->value.data() + static_cast<std::size_t>(o) * Din;
                double* dwr = n.inputs[1]->grad.data() + static_cast<std::size_t>(o) * Din;
                for (int i = 0; i < Din; ++i) {
                    n.inputs[0]->grad[i] += go * wr[i];
                    dwr[i] += go * n.inputs[0]->value[i];
                }
            }
        });
}

inline Tensor flatten(const Tensor& x) {
    std::vector<double> out = x.values();
    return Tensor::make_op("flatten", {static_cast<int>(x.size())}, std::move(out), {x},
        [](detail::Node& n) {
            for (std::size_t i = 0; i < n.size(); ++i) n.inputs[0]->grad[i] += n.grad[i];
        });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return Tensor::make_op("sum", {1}, {s}, {x},
        [](detail::Node& n) {
            for (std::size_t i = 0; i < n.inputs[0]->value.size(); ++i)
                n.inputs[0]->grad[i] += n.grad[0];
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return Tensor::make_op("mul", a.shape(), std::move(out), {a, b},
        [](detail::Node& n) {
            for (std::size_t i = 0; i < n.size(); ++i) {
                n.inputs[0]->grad[i] += n.grad[i] * n.inputs[1]->value[i];
                n.inputs[1]->grad[i] += n.grad[i] * n.inputs[0]->value[i];
            }
        });
}

// Euclidean norm of a flat vector; errors out on the zero vector so the
// norm/direction split never fabricates a direction.
inline Tensor l2_norm(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v * v;
    double r = std::sqrt(s);
    if (r == 0.0) throw std::runtime_error("l2_norm: degenerate zero embedding");
    return Tensor::make_op("l2_norm", {1}, {r}, {x},
        [r](detail::Node& n) {
            for (std::size_t i = 0; i < n.inputs[0]->value.size(); ++i)
                n.inputs[0]->grad[i] += n.grad[0] * n.inputs[0]->value[i] / r;
        });
}

// x / r with r a positive scalar tensor (both differentiable).
inline Tensor div_scalar(const Tensor& x, const Tensor& r) {
    if (r.size() != 1) throw std::invalid_argument("div_scalar: divisor must be scalar");
    double rv = r.values()[0];
    if (rv == 0.0) throw std::runtime_error("div_scalar: division by zero");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] / rv;
    return Tensor::make_op("div_scalar", x.shape(), std::move(out), {x, r},
        [rv](detail::Node& n) {
            double gr = 0.0;
            for (std::size_t i = 0; i < n.size(); ++i) {
                n.inputs[0]->grad[i] += n.grad[i] / rv;
                gr -= n.grad[i] * n.inputs[0]->value[i] / (rv * rv);
            }
            n.inputs[1]->grad[0] += gr;
        });
}

// logits fixed-matrix product: M (rows x d, non-differentiable constant) * x.
inline Tensor matvec_const(const std::vector<std::vector<double>>& m, const Tensor& x) {
    const int d = x.shape()[0];
    const int rows = static_cast<int>(m.size());
    std::vector<double> out(rows);
    for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(m[r].size()) != d)
            throw std::invalid_argument("matvec_const: row dimension mismatch");
        double acc = 0.0;
        for (int i = 0; i < d; ++i) acc += m[r][i] * x.values()[i];
        out[r] = acc;
    }
    return Tensor::make_op("matvec_const", {rows}, std::move(out), {x},
        [m, d, rows](detail::Node& n) {
            for (int r = 0; r < rows; ++r)
                for (int i = 0; i < d; ++i)
                    n.inputs[0]->grad[i] += n.grad[r] * m[r][i];
        });
}

// Cross-entropy of a logit vector against a target index (stable logsumexp).
inline Tensor cross_entropy_logits(const Tensor& logits, int target) {
    const int n = logits.shape()[0];
    if (target < 0 || target >= n) throw std::invalid_argument("cross_entropy_logits: target out of range");
    double mx = *std::max_element(logits.values().begin(), logits.values().end());
    double lse = 0.0;
    for (double v : logits.values()) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    double loss = lse - logits.values()[target];
    return Tensor::make_op("cross_entropy", {1}, {loss}, {logits},
        [target, lse](detail::Node& n) {
            for (std::size_t i = 0; i < n.inputs[0]->value.size(); ++i) {
                double p = std::exp(n.inputs[0]->value[i] - lse);
                double ind = (static_cast<int>(i) == target) ? 1.0 : 0.0;
                n.inputs[0]->grad[i] += n.grad[0] * (p - ind);
            }
        });
}

// Binary cross-entropy of a probability scalar against label y in {0,1}.
inline Tensor bce(const Tensor& p, double y) {
    if (p.size() != 1) throw std::invalid_argument("bce: expects scalar probability");
    double pv = std::clamp(p.values()[0], 1e-12, 1.0 - 1e-12);
    double loss = -(y * std::log(pv) + (1.0 - y) * std::log(1.0 - pv));
    return Tensor::make_op("bce", {1}, {loss}, {p},
        [y](detail::Node& n) {
            double pv = std::clamp(n.inputs[0]->value[0], 1e-12, 1.0 - 1e-12);
            n.inputs[0]->grad[0] += n.grad[0] * (pv - y) / (pv * (1.0 - pv));
        });
}

}  // namespace mae
