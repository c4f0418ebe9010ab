#include "tofdetect/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tofd {

std::string shape_string(const Shape5& s) {
    std::ostringstream os;
    os << "(" << s[0] << ", " << s[1] << ", " << s[2] << ", " << s[3] << ", " << s[4] << ")";
    return os.str();
}

template <class T>
bool Tensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
int ceil_div(int a, int b) { return -floor_div(-a, b); }

// Output indices o with 0 <= o * stride + k - pad < in, clipped to [0, out).
struct Range {
    int lo;
    int hi;  // inclusive
};
Range valid_range(int in, int out, int stride, int k, int pad) {
    return {std::max(0, ceil_div(pad - k, stride)), std::min(out - 1, floor_div(in - 1 + pad - k, stride))};
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        fail(ErrorKind::ShapeMismatch,
             std::string(what) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
}

struct ConvGeometry {
    int n, ci, co, d, h, w, kd, kh, kw, pd, ph, pw, od, oh, ow, stride;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights, int stride) {
    if (stride != 1 && stride != 2) fail(ErrorKind::ShapeMismatch, "conv3d stride must be 1 or 2");
    if (weights.c() != input.c())
        fail(ErrorKind::ShapeMismatch, "conv3d: weight in_c " + std::to_string(weights.c()) + " vs input channels " +
                                           std::to_string(input.c()));
    if (weights.d() % 2 == 0 || weights.h() % 2 == 0 || weights.w() % 2 == 0)
        fail(ErrorKind::ShapeMismatch, "conv3d kernel sides must be odd");
    ConvGeometry g{};
    g.n = input.n();
    g.ci = input.c();
    g.co = weights.n();
    g.d = input.d();
    g.h = input.h();
    g.w = input.w();
    g.kd = weights.d();
    g.kh = weights.h();
    g.kw = weights.w();
    g.pd = g.kd / 2;
    g.ph = g.kh / 2;
    g.pw = g.kw / 2;
    g.stride = stride;
    g.od = conv_out_dim(g.d, stride);
    g.oh = conv_out_dim(g.h, stride);
    g.ow = conv_out_dim(g.w, stride);
    return g;
}


// Stride-1 convolutions run on a zero-padded copy of the input. Output rows
// are computed at the padded width so every inner loop walks one contiguous
// (height * padded width) run; the extra columns are discarded afterwards.
struct PaddedLayout {
    int dp, hp, wp;
    std::size_t plane;  // dp * hp * wp plus slack for the widest shifted read
};

PaddedLayout padded_layout(const ConvGeometry& g) {
    PaddedLayout l{g.d + 2 * g.pd, g.h + 2 * g.ph, g.w + 2 * g.pw, 0};
    l.plane = static_cast<std::size_t>(l.dp) * l.hp * l.wp + static_cast<std::size_t>(l.wp) + 2 * g.pw;
    return l;
}

template <class T>
std::vector<T> pad_input(const Tensor<T>& input, int b, const ConvGeometry& g, const PaddedLayout& l) {
    std::vector<T> buf(static_cast<std::size_t>(g.ci) * l.plane, T(0));
    for (int ci = 0; ci < g.ci; ++ci) {
        const T* x = input.plane(b, ci);
        T* p = buf.data() + static_cast<std::size_t>(ci) * l.plane;
        for (int z = 0; z < g.d; ++z)
            for (int y = 0; y < g.h; ++y)
                std::copy_n(x + (static_cast<std::size_t>(z) * g.h + y) * g.w, g.w,
                            p + ((static_cast<std::size_t>(z) + g.pd) * l.hp + y + g.ph) * l.wp + g.pw);
    }
    return buf;
}

template <class T>
Tensor<T> conv3d_forward_s1(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias,
                            const ConvGeometry& g) {
    const PaddedLayout l = padded_layout(g);
    const std::size_t run = static_cast<std::size_t>(g.h) * l.wp;  // one output z-slice at padded width
    Tensor<T> out({g.n, g.co, g.d, g.h, g.w});
    std::vector<T> acc(static_cast<std::size_t>(g.d) * run);
    for (int b = 0; b < g.n; ++b) {
        const std::vector<T> padded = pad_input(input, b, g, l);
        for (int co = 0; co < g.co; ++co) {
            std::fill(acc.begin(), acc.end(), bias.empty() ? T(0) : bias[co]);
            for (int ci = 0; ci < g.ci; ++ci) {
                const T* p = padded.data() + static_cast<std::size_t>(ci) * l.plane;
                const T* wk = weights.plane(co, ci);
                for (int kz = 0; kz < g.kd; ++kz)
                    for (int ky = 0; ky < g.kh; ++ky)
                        for (int kx = 0; kx < g.kw; ++kx) {
                            const T wv = wk[(kz * g.kh + ky) * g.kw + kx];
                            for (int z = 0; z < g.d; ++z) {
                                const T* src = p + ((static_cast<std::size_t>(z) + kz) * l.hp + ky) * l.wp + kx;
                                T* dst = acc.data() + static_cast<std::size_t>(z) * run;
                                for (std::size_t j = 0; j < run; ++j) dst[j] += wv * src[j];
                            }
                        }
            }
            T* o = out.plane(b, co);
            for (int z = 0; z < g.d; ++z)
                for (int y = 0; y < g.h; ++y)
                    std::copy_n(acc.data() + static_cast<std::size_t>(z) * run + static_cast<std::size_t>(y) * l.wp, g.w,
                                o + (static_cast<std::size_t>(z) * g.h + y) * g.w);
        }
    }
    return out;
}

template <class T>
void conv3d_backward_s1(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out,
                        const ConvGeometry& g, ConvGrads<T>& grads) {
    const PaddedLayout l = padded_layout(g);
    const std::size_t run = static_cast<std::size_t>(g.h) * l.wp;
    std::vector<T> gout(static_cast<std::size_t>(g.d) * run);
    std::vector<T> gpad(static_cast<std::size_t>(g.ci) * l.plane);
    for (int b = 0; b < g.n; ++b) {
        const std::vector<T> padded = pad_input(input, b, g, l);
        std::fill(gpad.begin(), gpad.end(), T(0));
        for (int co = 0; co < g.co; ++co) {
            // Upstream gradient at padded width; the extra columns stay zero.
            std::fill(gout.begin(), gout.end(), T(0));
            const T* go = grad_out.plane(b, co);
            for (int z = 0; z < g.d; ++z)
                for (int y = 0; y < g.h; ++y)
                    std::copy_n(go + (static_cast<std::size_t>(z) * g.h + y) * g.w, g.w,
                                gout.data() + static_cast<std::size_t>(z) * run + static_cast<std::size_t>(y) * l.wp);
            for (int ci = 0; ci < g.ci; ++ci) {
                const T* p = padded.data() + static_cast<std::size_t>(ci) * l.plane;
                T* gp = gpad.data() + static_cast<std::size_t>(ci) * l.plane;
                const T* wk = weights.plane(co, ci);
                T* gw = grads.weights.plane(co, ci);
                for (int kz = 0; kz < g.kd; ++kz)
                    for (int ky = 0; ky < g.kh; ++ky)
                        for (int kx = 0; kx < g.kw; ++kx) {
                            const int widx = (kz * g.kh + ky) * g.kw + kx;
                            const T wv = wk[widx];
                            T wacc = 0;
                            for (int z = 0; z < g.d; ++z) {
                                const std::size_t off = ((static_cast<std::size_t>(z) + kz) * l.hp + ky) * l.wp + kx;
                                const T* src = p + off;
                                T* dst = gp + off;
                                const T* gr = gout.data() + static_cast<std::size_t>(z) * run;
                                T part = 0;
                                for (std::size_t j = 0; j < run; ++j) {
                                    part += gr[j] * src[j];
                                    dst[j] += wv * gr[j];
                                }
                                wacc += part;
                            }
                            gw[widx] += wacc;
                        }
            }
        }
        for (int ci = 0; ci < g.ci; ++ci) {
            const T* gp = gpad.data() + static_cast<std::size_t>(ci) * l.plane;
            T* gx = grads.input.plane(b, ci);
            for (int z = 0; z < g.d; ++z)
                for (int y = 0; y < g.h; ++y)
                    std::copy_n(gp + ((static_cast<std::size_t>(z) + g.pd) * l.hp + y + g.ph) * l.wp + g.pw, g.w,
                                gx + (static_cast<std::size_t>(z) * g.h + y) * g.w);
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- conv3d

template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias, int stride) {
    const ConvGeometry g = conv_geometry(input, weights, stride);
    if (!bias.empty() && static_cast<int>(bias.size()) != g.co)
        fail(ErrorKind::ShapeMismatch, "conv3d: bias length does not match out channels");
    if (stride == 1) return conv3d_forward_s1(input, weights, bias, g);
    Tensor<T> out({g.n, g.co, g.od, g.oh, g.ow});
    const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
    const int s = g.stride;

    for (int b = 0; b < g.n; ++b) {
        for (int co = 0; co < g.co; ++co) {
            T* o = out.plane(b, co);
            if (!bias.empty()) std::fill(o, o + out.spatial(), bias[co]);
            for (int ci = 0; ci < g.ci; ++ci) {
                const T* x = input.plane(b, ci);
                const T* wk = weights.plane(co, ci);
                for (int kz = 0; kz < g.kd; ++kz) {
                    const Range rz = valid_range(g.d, g.od, s, kz, g.pd);
                    for (int ky = 0; ky < g.kh; ++ky) {
                        const Range ry = valid_range(g.h, g.oh, s, ky, g.ph);
                        const T* wrow = wk + (kz * g.kh + ky) * g.kw;
                        for (int oz = rz.lo; oz <= rz.hi; ++oz) {
                            const int iz = oz * s + kz - g.pd;
                            for (int oy = ry.lo; oy <= ry.hi; ++oy) {
                                const int iy = oy * s + ky - g.ph;
                                T* orow = o + (static_cast<std::size_t>(oz) * g.oh + oy) * g.ow;
                                const T* xrow = x + iz * in_plane + static_cast<std::size_t>(iy) * g.w;
                                for (int kx = 0; kx < g.kw; ++kx) {
                                    const T wv = wrow[kx];
                                    const Range rx = valid_range(g.w, g.ow, s, kx, g.pw);
                                    const int shift = kx - g.pw;
                                    if (s == 1) {
                                        for (int ox = rx.lo; ox <= rx.hi; ++ox) orow[ox] += wv * xrow[ox + shift];
                                    } else {
                                        for (int ox = rx.lo; ox <= rx.hi; ++ox) orow[ox] += wv * xrow[2 * ox + shift];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <class T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out, int stride,
                             bool has_bias) {
    const ConvGeometry g = conv_geometry(input, weights, stride);
    if (grad_out.shape() != Shape5{g.n, g.co, g.od, g.oh, g.ow})
        fail(ErrorKind::ShapeMismatch, "conv3d_backward: grad_out shape " + shape_string(grad_out.shape()));
    ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), {}};
    const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
    const int s = g.stride;

    if (has_bias) {
        grads.bias.assign(g.co, T(0));
        for (int b = 0; b < g.n; ++b)
            for (int co = 0; co < g.co; ++co) {
                const T* go = grad_out.plane(b, co);
                T acc = 0;
                for (std::size_t i = 0; i < grad_out.spatial(); ++i) acc += go[i];
                grads.bias[co] += acc;
            }
    }

    if (stride == 1) {
        conv3d_backward_s1(input, weights, grad_out, g, grads);
        return grads;
    }

    for (int b = 0; b < g.n; ++b) {
        for (int co = 0; co < g.co; ++co) {
            const T* go = grad_out.plane(b, co);
            for (int ci = 0; ci < g.ci; ++ci) {
                const T* x = input.plane(b, ci);
                T* gx = grads.input.plane(b, ci);
                const T* wk = weights.plane(co, ci);
                T* gw = grads.weights.plane(co, ci);
                for (int kz = 0; kz < g.kd; ++kz) {
                    const Range rz = valid_range(g.d, g.od, s, kz, g.pd);
                    for (int ky = 0; ky < g.kh; ++ky) {
                        const Range ry = valid_range(g.h, g.oh, s, ky, g.ph);
                        const int wbase = (kz * g.kh + ky) * g.kw;
                        for (int kx = 0; kx < g.kw; ++kx) {
                            const T wv = wk[wbase + kx];
                            const Range rx = valid_range(g.w, g.ow, s, kx, g.pw);
                            T wacc = 0;
                            for (int oz = rz.lo; oz <= rz.hi; ++oz) {
                                const int iz = oz * s + kz - g.pd;
                                for (int oy = ry.lo; oy <= ry.hi; ++oy) {
                                    const int iy = oy * s + ky - g.ph;
                                    const T* grow = go + (static_cast<std::size_t>(oz) * g.oh + oy) * g.ow;
                                    const std::size_t row = iz * in_plane + static_cast<std::size_t>(iy) * g.w;
                                    const T* xs = x + row;
                                    T* gxs = gx + row;
                                    const int shift = kx - g.pw;
                                    if (s == 1) {
                                        for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                                            wacc += grow[ox] * xs[ox + shift];
                                            gxs[ox + shift] += wv * grow[ox];
                                        }
                                    } else {
                                        for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                                            wacc += grow[ox] * xs[2 * ox + shift];
                                            gxs[2 * ox + shift] += wv * grow[ox];
                                        }
                                    }
                                }
                            }
                            gw[wbase + kx] += wacc;
                        }
                    }
                }
            }
        }
    }
    return grads;
}

// ---------------------------------------------------------------- upsampling

template <class T>
Tensor<T> upsample_repeat_forward(const Tensor<T>& input, int factor) {
    if (factor < 1) fail(ErrorKind::InvalidArgument, "upsample factor must be >= 1");
    const Shape5 s = input.shape();
    Tensor<T> out({s[0], s[1], s[2] * factor, s[3] * factor, s[4] * factor});
    for (int b = 0; b < s[0]; ++b)
        for (int c = 0; c < s[1]; ++c)
            for (int z = 0; z < out.d(); ++z)
                for (int y = 0; y < out.h(); ++y) {
                    const T* src = &input.at(b, c, z / factor, y / factor, 0);
                    T* dst = &out.at(b, c, z, y, 0);
                    for (int x = 0; x < out.w(); ++x) dst[x] = src[x / factor];
                }
    return out;
}

template <class T>
Tensor<T> upsample_repeat_backward(const Tensor<T>& grad_out, int factor) {
    if (factor < 1) fail(ErrorKind::InvalidArgument, "upsample factor must be >= 1");
    const Shape5 s = grad_out.shape();
    if (s[2] % factor || s[3] % factor || s[4] % factor)
        fail(ErrorKind::ShapeMismatch, "upsample backward: grad shape not divisible by factor");
    Tensor<T> out({s[0], s[1], s[2] / factor, s[3] / factor, s[4] / factor});
    for (int b = 0; b < s[0]; ++b)
        for (int c = 0; c < s[1]; ++c)
            for (int z = 0; z < s[2]; ++z)
                for (int y = 0; y < s[3]; ++y) {
                    const T* src = &grad_out.at(b, c, z, y, 0);
                    T* dst = &out.at(b, c, z / factor, y / factor, 0);
                    for (int x = 0; x < s[4]; ++x) dst[x / factor] += src[x];
                }
    return out;
}

// ---------------------------------------------------------------- activations

template <class T>
Tensor<T> leaky_relu_forward(const Tensor<T>& input, T slope) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] >= T(0) ? input[i] : slope * input[i];
    return out;
}

template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out, T slope) {
    require_same_shape(input, grad_out, "leaky_relu_backward");
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] >= T(0) ? grad_out[i] : slope * grad_out[i];
    return out;
}

template <class T>
Tensor<T> sigmoid_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        const T x = input[i];
        // Branches keep exp() from overflowing for large |x|.
        if (x >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-x));
        } else {
            const T e = std::exp(x);
            out[i] = e / (T(1) + e);
        }
    }
    return out;
}

template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
    require_same_shape(output, grad_out, "sigmoid_backward");
    Tensor<T> out(output.shape());
    for (std::size_t i = 0; i < output.size(); ++i) out[i] = grad_out[i] * output[i] * (T(1) - output[i]);
    return out;
}

template <class T>
Tensor<T> softmax_channels_forward(const Tensor<T>& input) {
    Tensor<T> out(input.shape());
    const std::size_t sp = input.spatial();
    const int C = input.c();
    for (int b = 0; b < input.n(); ++b) {
        for (std::size_t v = 0; v < sp; ++v) {
            T mx = input.plane(b, 0)[v];
            for (int c = 1; c < C; ++c) mx = std::max(mx, input.plane(b, c)[v]);
            T sum = 0;
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(input.plane(b, c)[v] - mx);
                out.plane(b, c)[v] = e;
                sum += e;
            }
            for (int c = 0; c < C; ++c) out.plane(b, c)[v] /= sum;
        }
    }
    return out;
}

template <class T>
Tensor<T> softmax_channels_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
    require_same_shape(output, grad_out, "softmax_channels_backward");
    Tensor<T> out(output.shape());
    const std::size_t sp = output.spatial();
    const int C = output.c();
    for (int b = 0; b < output.n(); ++b) {
        for (std::size_t v = 0; v < sp; ++v) {
            T dot = 0;
            for (int c = 0; c < C; ++c) dot += output.plane(b, c)[v] * grad_out.plane(b, c)[v];
            for (int c = 0; c < C; ++c)
                out.plane(b, c)[v] = output.plane(b, c)[v] * (grad_out.plane(b, c)[v] - dot);
        }
    }
    return out;
}

// ---------------------------------------------------------------- normalization

template <class T>
Tensor<T> instance_norm_forward(const Tensor<T>& input, std::span<const T> gamma, std::span<const T> beta, T eps,
                                InstanceNormCache<T>* cache) {
    const int C = input.c();
    if (static_cast<int>(gamma.size()) != C || static_cast<int>(beta.size()) != C)
        fail(ErrorKind::ShapeMismatch, "instance_norm: gamma/beta length does not match channels");
    Tensor<T> out(input.shape());
    Tensor<T> normalized(input.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(input.n()) * C);
    const std::size_t sp = input.spatial();
    for (int b = 0; b < input.n(); ++b) {
        for (int c = 0; c < C; ++c) {
            const T* x = input.plane(b, c);
            // Accumulate statistics in double regardless of T.
            double mean = 0.0;
            for (std::size_t i = 0; i < sp; ++i) mean += x[i];
            mean /= static_cast<double>(sp);
            double var = 0.0;
            for (std::size_t i = 0; i < sp; ++i) var += (x[i] - mean) * (x[i] - mean);
            var /= static_cast<double>(sp);
            const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            inv_std[static_cast<std::size_t>(b) * C + c] = istd;
            T* xn = normalized.plane(b, c);
            T* y = out.plane(b, c);
            for (std::size_t i = 0; i < sp; ++i) {
                xn[i] = (x[i] - static_cast<T>(mean)) * istd;
                y[i] = xn[i] * gamma[c] + beta[c];
            }
        }
    }
    if (cache != nullptr) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

template <class T>
InstanceNormGrads<T> instance_norm_backward(const InstanceNormCache<T>& cache, std::span<const T> gamma,
                                            const Tensor<T>& grad_out) {
    require_same_shape(cache.normalized, grad_out, "instance_norm_backward");
    const int C = grad_out.c();
    InstanceNormGrads<T> g{Tensor<T>(grad_out.shape()), std::vector<T>(C, T(0)), std::vector<T>(C, T(0))};
    const std::size_t sp = grad_out.spatial();
    const double n = static_cast<double>(sp);
    for (int b = 0; b < grad_out.n(); ++b) {
        for (int c = 0; c < C; ++c) {
            const T* dy = grad_out.plane(b, c);
            const T* xn = cache.normalized.plane(b, c);
            double sum_dy = 0.0, sum_dy_xn = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
                sum_dy += dy[i];
                sum_dy_xn += static_cast<double>(dy[i]) * xn[i];
            }
            g.gamma[c] += static_cast<T>(sum_dy_xn);
            g.beta[c] += static_cast<T>(sum_dy);
            const double istd = cache.inv_std[static_cast<std::size_t>(b) * C + c];
            const double k = gamma[c] * istd / n;
            T* dx = g.input.plane(b, c);
            for (std::size_t i = 0; i < sp; ++i)
                dx[i] = static_cast<T>(k * (n * dy[i] - sum_dy - xn[i] * sum_dy_xn));
        }
    }
    return g;
}

// ---------------------------------------------------------------- dropout

template <class T>
Tensor<T> dropout_forward(const Tensor<T>& input, double p_drop, Rng& rng, bool training, std::vector<T>* keep_scale) {
    if (!(p_drop >= 0.0 && p_drop < 1.0)) fail(ErrorKind::InvalidArgument, "p_drop must be in [0, 1)");
    if (!training || p_drop == 0.0) {
        if (keep_scale != nullptr) keep_scale->assign(input.size(), T(1));
        return input;
    }
    const T scale = static_cast<T>(1.0 / (1.0 - p_drop));
    Tensor<T> out(input.shape());
    std::vector<T> factors(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) {
        factors[i] = rng.uniform() < p_drop ? T(0) : scale;
        out[i] = input[i] * factors[i];
    }
    if (keep_scale != nullptr) *keep_scale = std::move(factors);
    return out;
}

// ---------------------------------------------------------------- pooling / dense

template <class T>
Tensor<T> global_max_pool_forward(const Tensor<T>& input, std::vector<std::size_t>* argmax) {
    Tensor<T> out({input.n(), input.c(), 1, 1, 1});
    if (argmax != nullptr) argmax->assign(static_cast<std::size_t>(input.n()) * input.c(), 0);
    const std::size_t sp = input.spatial();
    for (int b = 0; b < input.n(); ++b)
        for (int c = 0; c < input.c(); ++c) {
            const T* x = input.plane(b, c);
            std::size_t best = 0;
            for (std::size_t i = 1; i < sp; ++i)
                if (x[i] > x[best]) best = i;
            out.at(b, c, 0, 0, 0) = x[best];
            if (argmax != nullptr) (*argmax)[static_cast<std::size_t>(b) * input.c() + c] = best;
        }
    return out;
}

template <class T>
Tensor<T> global_max_pool_backward(const Shape5& input_shape, const std::vector<std::size_t>& argmax,
                                   const Tensor<T>& grad_out) {
    Tensor<T> g(input_shape);
    for (int b = 0; b < input_shape[0]; ++b)
        for (int c = 0; c < input_shape[1]; ++c)
            g.plane(b, c)[argmax[static_cast<std::size_t>(b) * input_shape[1] + c]] += grad_out.at(b, c, 0, 0, 0);
    return g;
}

template <class T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias) {
    const int cin = input.c(), cout = weights.n();
    if (input.spatial() != 1 || weights.c() != cin || weights.spatial() != 1)
        fail(ErrorKind::ShapeMismatch,
             "dense: input " + shape_string(input.shape()) + " vs weights " + shape_string(weights.shape()));
    if (!bias.empty() && static_cast<int>(bias.size()) != cout)
        fail(ErrorKind::ShapeMismatch, "dense: bias length does not match out features");
    Tensor<T> out({input.n(), cout, 1, 1, 1});
    for (int b = 0; b < input.n(); ++b)
        for (int o = 0; o < cout; ++o) {
            T acc = bias.empty() ? T(0) : bias[o];
            for (int i = 0; i < cin; ++i) acc += weights[static_cast<std::size_t>(o) * cin + i] * input.at(b, i, 0, 0, 0);
            out.at(b, o, 0, 0, 0) = acc;
        }
    return out;
}

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out) {
    const int cin = input.c(), cout = weights.n();
    if (grad_out.shape() != Shape5{input.n(), cout, 1, 1, 1})
        fail(ErrorKind::ShapeMismatch, "dense_backward: grad_out shape " + shape_string(grad_out.shape()));
    DenseGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weights.shape()), std::vector<T>(cout, T(0))};
    for (int b = 0; b < input.n(); ++b)
        for (int o = 0; o < cout; ++o) {
            const T go = grad_out.at(b, o, 0, 0, 0);
            g.bias[o] += go;
            for (int i = 0; i < cin; ++i) {
                g.weights[static_cast<std::size_t>(o) * cin + i] += go * input.at(b, i, 0, 0, 0);
                g.input.at(b, i, 0, 0, 0) += go * weights[static_cast<std::size_t>(o) * cin + i];
            }
        }
    return g;
}

template <class T>
Tensor<T> scale_channels_forward(const Tensor<T>& input, const Tensor<T>& gates) {
    if (gates.shape() != Shape5{input.n(), input.c(), 1, 1, 1})
        fail(ErrorKind::ShapeMismatch, "scale_channels: gate shape " + shape_string(gates.shape()));
    Tensor<T> out(input.shape());
    const std::size_t sp = input.spatial();
    for (int b = 0; b < input.n(); ++b)
        for (int c = 0; c < input.c(); ++c) {
            const T g = gates.at(b, c, 0, 0, 0);
            const T* x = input.plane(b, c);
            T* y = out.plane(b, c);
            for (std::size_t i = 0; i < sp; ++i) y[i] = x[i] * g;
        }
    return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.n() != b.n() || a.d() != b.d() || a.h() != b.h() || a.w() != b.w())
        fail(ErrorKind::ShapeMismatch, "concat: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    Tensor<T> out({a.n(), a.c() + b.c(), a.d(), a.h(), a.w()});
    const std::size_t sp = a.spatial();
    for (int n = 0; n < a.n(); ++n) {
        for (int c = 0; c < a.c(); ++c) std::copy_n(a.plane(n, c), sp, out.plane(n, c));
        for (int c = 0; c < b.c(); ++c) std::copy_n(b.plane(n, c), sp, out.plane(n, a.c() + c));
    }
    return out;
}

double glorot_limit(const Shape5& shape) {
    const double receptive = static_cast<double>(shape[2]) * shape[3] * shape[4];
    const double fan_in = shape[1] * receptive;
    const double fan_out = shape[0] * receptive;
    return std::sqrt(6.0 / (fan_in + fan_out));
}

template <class T>
Tensor<T> glorot_uniform(const Shape5& shape, Rng& rng) {
    const double limit = glorot_limit(shape);
    Tensor<T> out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(rng.uniform(-limit, limit));
    return out;
}

#define TOFD_INSTANTIATE_LAYERS(T)                                                                               \
    template Tensor<T> conv3d_forward(const Tensor<T>&, const Tensor<T>&, std::span<const T>, int);             \
    template ConvGrads<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, bool);      \
    template Tensor<T> upsample_repeat_forward(const Tensor<T>&, int);                                         \
    template Tensor<T> upsample_repeat_backward(const Tensor<T>&, int);                                        \
    template Tensor<T> leaky_relu_forward(const Tensor<T>&, T);                                                \
    template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                             \
    template Tensor<T> instance_norm_forward(const Tensor<T>&, std::span<const T>, std::span<const T>, T,      \
                                             InstanceNormCache<T>*);                                           \
    template InstanceNormGrads<T> instance_norm_backward(const InstanceNormCache<T>&, std::span<const T>,      \
                                                         const Tensor<T>&);                                    \
    template Tensor<T> dropout_forward(const Tensor<T>&, double, Rng&, bool, std::vector<T>*);                 \
    template Tensor<T> global_max_pool_forward(const Tensor<T>&, std::vector<std::size_t>*);                   \
    template Tensor<T> global_max_pool_backward(const Shape5&, const std::vector<std::size_t>&,                \
                                                const Tensor<T>&);                                             \
    template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, std::span<const T>);                  \
    template DenseGrads<T> dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> sigmoid_forward(const Tensor<T>&);                                                      \
    template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> softmax_channels_forward(const Tensor<T>&);                                             \
    template Tensor<T> softmax_channels_backward(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> scale_channels_forward(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> glorot_uniform(const Shape5&, Rng&);

TOFD_INSTANTIATE_LAYERS(float)
TOFD_INSTANTIATE_LAYERS(double)

#undef TOFD_INSTANTIATE_LAYERS

}  // namespace tofd
