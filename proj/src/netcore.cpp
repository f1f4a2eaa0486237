#include "ganproj/netcore.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ganproj/error.hpp"
#include "ganproj/rng.hpp"

namespace ganproj {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

/// Geometry shared by convolution and transposed convolution. The "big" grid
/// is the conv input / tconv output; the "small" grid is the other side.
struct ConvGeom {
    std::size_t channels = 0;
    std::size_t big_h = 0, big_w = 0;
    std::size_t small_h = 0, small_w = 0;
    int k = 0, stride = 1, pad = 0;
};

/// Range [lo, hi) of small-grid indices whose big-grid position
/// idx*stride - pad + offset falls inside [0, big).
std::pair<std::size_t, std::size_t> valid_range(std::size_t small, std::size_t big, int stride, int pad, int offset) {
    const long shift = static_cast<long>(offset) - pad;
    long lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
    long hi = (static_cast<long>(big) - 1 - shift);
    hi = hi < 0 ? 0 : hi / stride + 1;
    hi = std::min<long>(hi, static_cast<long>(small));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

/// cols[(c*k + ki)*k + kj][sy*small_w + sx] = big[c][sy*s - p + ki][sx*s - p + kj]
/// Rows of cols are ld apart so several samples can share one column block.
void im2col(const ConvGeom& g, const double* big, double* cols, std::size_t ld) {
    const std::size_t s = static_cast<std::size_t>(g.stride);
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.k; ++ki) {
            const auto [y0, y1] = valid_range(g.small_h, g.big_h, g.stride, g.pad, ki);
            for (int kj = 0; kj < g.k; ++kj) {
                const auto [x0, x1] = valid_range(g.small_w, g.big_w, g.stride, g.pad, kj);
                double* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
                for (std::size_t sy = 0; sy < g.small_h; ++sy) {
                    double* dst = row + sy * g.small_w;
                    if (sy < y0 || sy >= y1) {
                        std::fill_n(dst, g.small_w, 0.0);
                        continue;
                    }
                    const std::size_t by = sy * s + ki - g.pad;
                    const double* src = big + (c * g.big_h + by) * g.big_w + kj - g.pad;
                    for (std::size_t sx = 0; sx < x0; ++sx) dst[sx] = 0.0;
                    for (std::size_t sx = x0; sx < x1; ++sx) dst[sx] = src[sx * s];
                    for (std::size_t sx = x1; sx < g.small_w; ++sx) dst[sx] = 0.0;
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds cols into big.
void col2im(const ConvGeom& g, const double* cols, std::size_t ld, double* big) {
    const std::size_t s = static_cast<std::size_t>(g.stride);
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.k; ++ki) {
            const auto [y0, y1] = valid_range(g.small_h, g.big_h, g.stride, g.pad, ki);
            for (int kj = 0; kj < g.k; ++kj) {
                const auto [x0, x1] = valid_range(g.small_w, g.big_w, g.stride, g.pad, kj);
                const double* row = cols + ((c * g.k + ki) * g.k + kj) * ld;
                for (std::size_t sy = y0; sy < y1; ++sy) {
                    const std::size_t by = sy * s + ki - g.pad;
                    double* dst = big + (c * g.big_h + by) * g.big_w + kj - g.pad;
                    const double* src = row + sy * g.small_w;
                    for (std::size_t sx = x0; sx < x1; ++sx) dst[sx * s] += src[sx];
                }
            }
        }
    }
}

long tconv_out_size(std::size_t in, int k, int stride, int pad) {
    return static_cast<long>(stride) * (static_cast<long>(in) - 1) + k - 2L * pad;
}

long conv_out_size(std::size_t in, int k, int stride, int pad) {
    const long span = static_cast<long>(in) + 2L * pad - k;
    if (span < 0) return 0;
    return span / stride + 1;
}

ConvGeom tconv_geom(const layers::ConvTranspose2d& l, const Shape& in, const Shape& out) {
    return {out[0], out[1], out[2], in[1], in[2], static_cast<int>(l.weight.dim(2)), l.stride, l.pad};
}

ConvGeom conv_geom(const layers::Conv2d& l, const Shape& in, const Shape& out) {
    return {in[0], in[1], in[2], out[1], out[2], static_cast<int>(l.weight.dim(2)), l.stride, l.pad};
}

Shape infer_output_shape(const Layer& layer, const Shape& in, std::size_t index) {
    const std::string where = "layer " + std::to_string(index) + " (" + layer_kind(layer) + ")";
    return std::visit(
        Overloaded{
            [&](const layers::Dense& l) -> Shape {
                if (l.weight.rank() != 2 || in.size() != 1 || l.weight.dim(1) != in[0]) {
                    throw ShapeError(where + ": dense weight " + shape_to_string(l.weight.shape()) +
                                     " incompatible with input " + shape_to_string(in));
                }
                if (l.bias.shape() != Shape{l.weight.dim(0)}) throw ShapeError(where + ": bad bias shape");
                return {l.weight.dim(0)};
            },
            [&](const layers::Reshape& l) -> Shape {
                if (shape_numel(l.shape) != shape_numel(in)) {
                    throw ShapeError(where + ": cannot reshape " + shape_to_string(in) + " to " +
                                     shape_to_string(l.shape));
                }
                return l.shape;
            },
            [&](const layers::BatchNorm& l) -> Shape {
                const Shape c{in.at(0)};
                if (l.gamma.shape() != c || l.beta.shape() != c || l.running_mean.shape() != c ||
                    l.running_var.shape() != c) {
                    throw ShapeError(where + ": batch-norm parameters must have " + std::to_string(in[0]) +
                                     " channels");
                }
                return in;
            },
            [&](const layers::ConvTranspose2d& l) -> Shape {
                if (in.size() != 3 || l.weight.rank() != 4 || l.weight.dim(0) != in[0] ||
                    l.weight.dim(2) != l.weight.dim(3)) {
                    throw ShapeError(where + ": weight " + shape_to_string(l.weight.shape()) +
                                     " incompatible with input " + shape_to_string(in));
                }
                if (l.bias.shape() != Shape{l.weight.dim(1)}) throw ShapeError(where + ": bad bias shape");
                if (l.stride <= 0 || l.pad < 0) throw ConfigError(where + ": stride must be positive, pad nonnegative");
                const int k = static_cast<int>(l.weight.dim(2));
                const long h = tconv_out_size(in[1], k, l.stride, l.pad);
                const long w = tconv_out_size(in[2], k, l.stride, l.pad);
                if (h <= 0 || w <= 0) throw ConfigError(where + ": nonpositive output size");
                return {l.weight.dim(1), static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
            },
            [&](const layers::Conv2d& l) -> Shape {
                if (in.size() != 3 || l.weight.rank() != 4 || l.weight.dim(1) != in[0] ||
                    l.weight.dim(2) != l.weight.dim(3)) {
                    throw ShapeError(where + ": weight " + shape_to_string(l.weight.shape()) +
                                     " incompatible with input " + shape_to_string(in));
                }
                if (l.bias.shape() != Shape{l.weight.dim(0)}) throw ShapeError(where + ": bad bias shape");
                if (l.stride <= 0 || l.pad < 0) throw ConfigError(where + ": stride must be positive, pad nonnegative");
                const int k = static_cast<int>(l.weight.dim(2));
                const long h = conv_out_size(in[1], k, l.stride, l.pad);
                const long w = conv_out_size(in[2], k, l.stride, l.pad);
                if (h <= 0 || w <= 0) throw ConfigError(where + ": nonpositive output size");
                return {l.weight.dim(0), static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
            },
            [&](const auto&) -> Shape { return in; },
        },
        layer);
}

Shape batched(std::size_t n, const Shape& per_sample) {
    Shape s{n};
    s.insert(s.end(), per_sample.begin(), per_sample.end());
    return s;
}

// ---- forward kernels -------------------------------------------------------

void dense_forward(const layers::Dense& l, const Tensor& x, Tensor& y, std::size_t n) {
    const auto out = l.weight.dim(0), in = l.weight.dim(1);
    MapConstMat X(x.data(), n, in);
    MapConstMat W(l.weight.data(), out, in);
    MapMat Y(y.data(), n, out);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(l.bias.data(), out);
}

void batch_norm_forward(const layers::BatchNorm& l, const Tensor& x, Tensor& y, std::size_t n, Mode mode,
                        BatchStats* stats) {
    const std::size_t channels = l.gamma.size();
    const std::size_t spatial = x.size() / (n * channels);
    std::vector<double> mean(channels), var(channels);
    if (mode == Mode::training) {
        const double count = static_cast<double>(n * spatial);
        for (std::size_t c = 0; c < channels; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = x.data() + (b * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) s += p[i];
            }
            const double m = s / count;
            double v = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = x.data() + (b * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) v += (p[i] - m) * (p[i] - m);
            }
            mean[c] = m;
            var[c] = v / count;
        }
        if (stats) *stats = BatchStats{mean, var, n * spatial};
    } else {
        mean.assign(l.running_mean.storage().begin(), l.running_mean.storage().end());
        var.assign(l.running_var.storage().begin(), l.running_var.storage().end());
    }
    for (std::size_t c = 0; c < channels; ++c) {
        const double scale = l.gamma[c] / std::sqrt(var[c] + l.eps);
        const double shift = l.beta[c] - mean[c] * scale;
        for (std::size_t b = 0; b < n; ++b) {
            const double* p = x.data() + (b * channels + c) * spatial;
            double* q = y.data() + (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) q[i] = p[i] * scale + shift;
        }
    }
}

/// {N, C, S} -> {C, N*S}
RowMat channels_first(const double* x, std::size_t n, std::size_t c, std::size_t spatial) {
    RowMat out(c, n * spatial);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < c; ++k)
            std::copy_n(x + (b * c + k) * spatial, spatial, out.data() + k * n * spatial + b * spatial);
    return out;
}

/// {C, N*S} -> {N, C, S}
void batch_first(const RowMat& m, std::size_t n, std::size_t c, std::size_t spatial, double* out) {
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < c; ++k)
            std::copy_n(m.data() + k * n * spatial + b * spatial, spatial, out + (b * c + k) * spatial);
}

void tconv_forward(const layers::ConvTranspose2d& l, const Shape& in, const Shape& out, const Tensor& x, Tensor& y,
                   std::size_t n) {
    const ConvGeom g = tconv_geom(l, in, out);
    const std::size_t cin = in[0], small_n = in[1] * in[2];
    const std::size_t rows = out[0] * g.k * g.k, big_n = out[1] * out[2];
    MapConstMat W(l.weight.data(), cin, rows);
    const std::size_t ld = n * small_n;
    RowMat cols(rows, ld);
    if (n == 1) {
        cols.noalias() = W.transpose() * MapConstMat(x.data(), cin, small_n);
    } else {
        cols.noalias() = W.transpose() * channels_first(x.data(), n, cin, small_n);
    }
    y.fill(0.0);
    for (std::size_t b = 0; b < n; ++b) {
        double* yb = y.data() + b * out[0] * big_n;
        col2im(g, cols.data() + b * small_n, ld, yb);
        for (std::size_t c = 0; c < out[0]; ++c) {
            double* p = yb + c * big_n;
            for (std::size_t i = 0; i < big_n; ++i) p[i] += l.bias[c];
        }
    }
}

void conv_forward(const layers::Conv2d& l, const Shape& in, const Shape& out, const Tensor& x, Tensor& y,
                  std::size_t n) {
    const ConvGeom g = conv_geom(l, in, out);
    const std::size_t cout = out[0], small_n = out[1] * out[2];
    const std::size_t rows = in[0] * g.k * g.k, big_n = in[1] * in[2];
    MapConstMat W(l.weight.data(), cout, rows);
    const std::size_t ld = n * small_n;
    RowMat cols(rows, ld);
    for (std::size_t b = 0; b < n; ++b) im2col(g, x.data() + b * in[0] * big_n, cols.data() + b * small_n, ld);
    RowMat ys = W * cols;
    ys.colwise() += Eigen::Map<const Eigen::VectorXd>(l.bias.data(), cout);
    batch_first(ys, n, cout, small_n, y.data());
}

Tensor layer_forward(const Layer& layer, const Shape& in, const Shape& out, const Tensor& x, std::size_t n, Mode mode,
                     BatchStats* stats) {
    Tensor y(batched(n, out));
    std::visit(Overloaded{
                   [&](const layers::Dense& l) { dense_forward(l, x, y, n); },
                   [&](const layers::Reshape&) { y.storage() = x.storage(); },
                   [&](const layers::BatchNorm& l) { batch_norm_forward(l, x, y, n, mode, stats); },
                   [&](const layers::Relu&) {
                       for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
                   },
                   [&](const layers::LeakyRelu& l) {
                       for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : l.slope * x[i];
                   },
                   [&](const layers::ConvTranspose2d& l) { tconv_forward(l, in, out, x, y, n); },
                   [&](const layers::Conv2d& l) { conv_forward(l, in, out, x, y, n); },
                   [&](const layers::Tanh&) {
                       for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
                   },
               },
               layer);
    return y;
}

// ---- backward kernels ------------------------------------------------------

void dense_backward(const layers::Dense& l, const Tensor& x, const Tensor& dy, std::size_t n, Tensor* dx,
                    Tensor* dw, Tensor* db) {
    const auto out = l.weight.dim(0), in = l.weight.dim(1);
    MapConstMat DY(dy.data(), n, out);
    if (dx) {
        MapConstMat W(l.weight.data(), out, in);
        MapMat DX(dx->data(), n, in);
        DX.noalias() = DY * W;
    }
    if (dw) {
        MapConstMat X(x.data(), n, in);
        MapMat DW(dw->data(), out, in);
        DW.noalias() += DY.transpose() * X;
        Eigen::Map<Eigen::RowVectorXd>(db->data(), out) += DY.colwise().sum();
    }
}

void batch_norm_backward(const layers::BatchNorm& l, const Tensor& x, const BatchStats* stats, const Tensor& dy,
                         std::size_t n, Mode mode, Tensor* dx, Tensor* dgamma, Tensor* dbeta) {
    const std::size_t channels = l.gamma.size();
    const std::size_t spatial = x.size() / (n * channels);
    for (std::size_t c = 0; c < channels; ++c) {
        const double mean = mode == Mode::training ? stats->mean[c] : l.running_mean[c];
        const double var = mode == Mode::training ? stats->var[c] : l.running_var[c];
        const double inv_std = 1.0 / std::sqrt(var + l.eps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const double* p = x.data() + (b * channels + c) * spatial;
            const double* g = dy.data() + (b * channels + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                sum_dy += g[i];
                sum_dy_xhat += g[i] * (p[i] - mean) * inv_std;
            }
        }
        if (dgamma) {
            (*dgamma)[c] += sum_dy_xhat;
            (*dbeta)[c] += sum_dy;
        }
        if (!dx) continue;
        const double gamma = l.gamma[c];
        if (mode == Mode::inference) {
            for (std::size_t b = 0; b < n; ++b) {
                const double* g = dy.data() + (b * channels + c) * spatial;
                double* q = dx->data() + (b * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) q[i] = g[i] * gamma * inv_std;
            }
        } else {
            // dx = gamma * inv_std / M * (M dy - sum(dy) - xhat * sum(dy * xhat))
            const double m = static_cast<double>(n * spatial);
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = x.data() + (b * channels + c) * spatial;
                const double* g = dy.data() + (b * channels + c) * spatial;
                double* q = dx->data() + (b * channels + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    const double xhat = (p[i] - mean) * inv_std;
                    q[i] = gamma * inv_std / m * (m * g[i] - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
    }
}

void tconv_backward(const layers::ConvTranspose2d& l, const Shape& in, const Shape& out, const Tensor& x,
                    const Tensor& dy, std::size_t n, Tensor* dx, Tensor* dw, Tensor* db) {
    const ConvGeom g = tconv_geom(l, in, out);
    const std::size_t cin = in[0], small_n = in[1] * in[2];
    const std::size_t rows = out[0] * g.k * g.k, big_n = out[1] * out[2];
    MapConstMat W(l.weight.data(), cin, rows);
    const std::size_t ld = n * small_n;
    RowMat dcols(rows, ld);
    for (std::size_t b = 0; b < n; ++b) im2col(g, dy.data() + b * out[0] * big_n, dcols.data() + b * small_n, ld);
    if (dx) {
        if (n == 1) {
            MapMat(dx->data(), cin, small_n).noalias() = W * dcols;
        } else {
            const RowMat dxs = W * dcols;
            batch_first(dxs, n, cin, small_n, dx->data());
        }
    }
    if (dw) {
        MapMat DW(dw->data(), cin, rows);
        if (n == 1) {
            DW.noalias() += MapConstMat(x.data(), cin, small_n) * dcols.transpose();
        } else {
            DW.noalias() += channels_first(x.data(), n, cin, small_n) * dcols.transpose();
        }
        for (std::size_t b = 0; b < n; ++b) {
            const double* dyb = dy.data() + b * out[0] * big_n;
            for (std::size_t c = 0; c < out[0]; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < big_n; ++i) s += dyb[c * big_n + i];
                (*db)[c] += s;
            }
        }
    }
}

void conv_backward(const layers::Conv2d& l, const Shape& in, const Shape& out, const Tensor& x, const Tensor& dy,
                   std::size_t n, Tensor* dx, Tensor* dw, Tensor* db) {
    const ConvGeom g = conv_geom(l, in, out);
    const std::size_t cout = out[0], small_n = out[1] * out[2];
    const std::size_t rows = in[0] * g.k * g.k, big_n = in[1] * in[2];
    MapConstMat W(l.weight.data(), cout, rows);
    const std::size_t ld = n * small_n;
    const RowMat dys = channels_first(dy.data(), n, cout, small_n);
    if (dw) {
        RowMat cols(rows, ld);
        for (std::size_t b = 0; b < n; ++b) im2col(g, x.data() + b * in[0] * big_n, cols.data() + b * small_n, ld);
        MapMat(dw->data(), cout, rows).noalias() += dys * cols.transpose();
        Eigen::Map<Eigen::VectorXd>(db->data(), cout) += dys.rowwise().sum();
    }
    if (dx) {
        const RowMat dcols = W.transpose() * dys;
        dx->fill(0.0);
        for (std::size_t b = 0; b < n; ++b) col2im(g, dcols.data() + b * small_n, ld, dx->data() + b * in[0] * big_n);
    }
}

/// Backward for one layer. pg points at this layer's parameter gradient slots
/// (may be empty when parameter gradients are not requested).
void layer_backward(const Layer& layer, const Shape& in, const Shape& out, const Tensor& x, const Tensor& y,
                    const BatchStats* stats, const Tensor& dy, std::size_t n, Mode mode, Tensor* dx,
                    std::span<Tensor> pg) {
    Tensor* p0 = pg.empty() ? nullptr : &pg[0];
    Tensor* p1 = pg.size() < 2 ? nullptr : &pg[1];
    std::visit(Overloaded{
                   [&](const layers::Dense& l) { dense_backward(l, x, dy, n, dx, p0, p1); },
                   [&](const layers::Reshape&) {
                       if (dx) dx->storage() = dy.storage();
                   },
                   [&](const layers::BatchNorm& l) { batch_norm_backward(l, x, stats, dy, n, mode, dx, p0, p1); },
                   [&](const layers::Relu&) {
                       if (!dx) return;
                       for (std::size_t i = 0; i < x.size(); ++i) (*dx)[i] = x[i] > 0.0 ? dy[i] : 0.0;
                   },
                   [&](const layers::LeakyRelu& l) {
                       if (!dx) return;
                       for (std::size_t i = 0; i < x.size(); ++i) (*dx)[i] = x[i] > 0.0 ? dy[i] : l.slope * dy[i];
                   },
                   [&](const layers::ConvTranspose2d& l) { tconv_backward(l, in, out, x, dy, n, dx, p0, p1); },
                   [&](const layers::Conv2d& l) { conv_backward(l, in, out, x, dy, n, dx, p0, p1); },
                   [&](const layers::Tanh&) {
                       if (!dx) return;
                       for (std::size_t i = 0; i < y.size(); ++i) (*dx)[i] = dy[i] * (1.0 - y[i] * y[i]);
                   },
               },
               layer);
}

std::size_t layer_param_count(const Layer& layer) {
    return std::visit(Overloaded{
                          [](const layers::Dense&) -> std::size_t { return 2; },
                          [](const layers::BatchNorm&) -> std::size_t { return 2; },
                          [](const layers::ConvTranspose2d&) -> std::size_t { return 2; },
                          [](const layers::Conv2d&) -> std::size_t { return 2; },
                          [](const auto&) -> std::size_t { return 0; },
                      },
                      layer);
}

template <class LayerT, class Out>
void collect_params(LayerT& layer, std::size_t index, Out&& emit, bool with_buffers) {
    const std::string p = std::to_string(index) + ".";
    std::visit(Overloaded{
                   [&](auto& l) requires requires { l.weight; } {
                       emit(p + "weight", &l.weight);
                       emit(p + "bias", &l.bias);
                   },
                   [&](auto& l) requires requires { l.gamma; } {
                       emit(p + "gamma", &l.gamma);
                       emit(p + "beta", &l.beta);
                       if (with_buffers) {
                           emit(p + "running_mean", &l.running_mean);
                           emit(p + "running_var", &l.running_var);
                       }
                   },
                   [&](auto&) {},
               },
               layer);
}

Tensor normal_tensor(Shape shape, double stddev, RandomStream& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal(0.0, stddev);
    return t;
}

layers::BatchNorm fresh_batch_norm(std::size_t channels) {
    return {Tensor({channels}, 1.0), Tensor({channels}, 0.0), Tensor({channels}, 0.0), Tensor({channels}, 1.0)};
}

}  // namespace

std::string to_string(const ImageShape& s) {
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

std::string layer_kind(const Layer& layer) {
    return std::visit(Overloaded{
                          [](const layers::Dense&) { return std::string("dense"); },
                          [](const layers::Reshape&) { return std::string("reshape"); },
                          [](const layers::BatchNorm&) { return std::string("batch_norm"); },
                          [](const layers::Relu&) { return std::string("relu"); },
                          [](const layers::LeakyRelu&) { return std::string("leaky_relu"); },
                          [](const layers::ConvTranspose2d&) { return std::string("conv_transpose2d"); },
                          [](const layers::Conv2d&) { return std::string("conv2d"); },
                          [](const layers::Tanh&) { return std::string("tanh"); },
                      },
                      layer);
}

// ---- ParamGrads ------------------------------------------------------------

void ParamGrads::scale(double factor) {
    for (auto& g : grads)
        for (auto& v : g.values()) v *= factor;
}

void ParamGrads::add(const ParamGrads& other) {
    if (other.grads.size() != grads.size()) throw ShapeError("parameter gradient sets differ in length");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        require_same_shape(grads[i], other.grads[i], "ParamGrads::add");
        for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += other.grads[i][j];
    }
}

bool ParamGrads::all_zero() const {
    return std::all_of(grads.begin(), grads.end(), [](const Tensor& t) {
        return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v == 0.0; });
    });
}

// ---- Sequential ------------------------------------------------------------

Sequential::Sequential(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    if (input_shape_.empty() || shape_numel(input_shape_) == 0) throw ShapeError("empty network input shape");
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        cur = infer_output_shape(layers_[i], cur, i);
        shapes_.push_back(cur);
    }
}

Tensor Sequential::forward(const Tensor& batch, Mode mode, ForwardTrace* trace) const {
    if (batch.rank() != input_shape_.size() + 1 ||
        !std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
        throw ShapeError("network expects input " + shape_to_string(batched(0, input_shape_)) + " (N first), got " +
                         shape_to_string(batch.shape()));
    }
    const std::size_t n = batch.dim(0);
    if (trace) {
        trace->activations.clear();
        trace->activations.reserve(layers_.size() + 1);
        trace->activations.push_back(batch);
        trace->batch_stats.assign(layers_.size(), BatchStats{});
    }
    Tensor cur;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        BatchStats* stats = trace ? &trace->batch_stats[i] : nullptr;
        const Tensor& x = trace ? trace->activations.back() : (i == 0 ? batch : cur);
        Tensor next = layer_forward(layers_[i], layer_input_shape(i), shapes_[i], x, n, mode, stats);
        if (trace) {
            trace->activations.push_back(std::move(next));
        } else {
            cur = std::move(next);
        }
    }
    if (layers_.empty()) return batch;
    return trace ? trace->activations.back() : cur;
}

Tensor Sequential::backward(const ForwardTrace& trace, const Tensor& grad_output, Mode mode, ParamGrads* grads,
                            bool want_input_grad) const {
    if (trace.activations.size() != layers_.size() + 1) throw ShapeError("forward trace does not match network");
    require_same_shape(trace.activations.back(), grad_output, "Sequential::backward");
    if (grads && grads->grads.size() != parameter_count()) throw ShapeError("parameter gradient set has wrong length");
    const std::size_t n = grad_output.dim(0);

    // Offsets of each layer's parameter slots.
    std::vector<std::size_t> offset(layers_.size() + 1, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) offset[i + 1] = offset[i] + layer_param_count(layers_[i]);

    // Earliest layer that needs a backward step.
    std::size_t first = 0;
    if (!want_input_grad && grads) {
        first = layers_.size();
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (layer_param_count(layers_[i])) {
                first = i;
                break;
            }
        }
    }

    Tensor dy = grad_output;
    for (std::size_t i = layers_.size(); i-- > first;) {
        const bool need_dx = i > first || want_input_grad;
        Tensor dx;
        if (need_dx) dx = Tensor(trace.activations[i].shape());
        std::span<Tensor> pg;
        if (grads) pg = std::span<Tensor>(grads->grads).subspan(offset[i], offset[i + 1] - offset[i]);
        const BatchStats* stats = trace.batch_stats.empty() ? nullptr : &trace.batch_stats[i];
        if (mode == Mode::training && std::holds_alternative<layers::BatchNorm>(layers_[i]) &&
            (!stats || stats->mean.empty())) {
            throw ConfigError("training-mode backward needs batch statistics from a training-mode forward");
        }
        layer_backward(layers_[i], layer_input_shape(i), shapes_[i], trace.activations[i], trace.activations[i + 1],
                       stats, dy, n, mode, need_dx ? &dx : nullptr, pg);
        if (!need_dx) break;
        dy = std::move(dx);
    }
    if (!want_input_grad) return {};
    if (first != 0) return {};
    return dy;
}

std::vector<Tensor*> Sequential::parameters() {
    std::vector<Tensor*> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        collect_params(layers_[i], i, [&](const std::string&, Tensor* t) { out.push_back(t); }, false);
    return out;
}

std::vector<const Tensor*> Sequential::parameters() const {
    std::vector<const Tensor*> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        collect_params(layers_[i], i, [&](const std::string&, const Tensor* t) { out.push_back(t); }, false);
    return out;
}

std::vector<std::string> Sequential::parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        collect_params(layers_[i], i, [&](const std::string& name, const Tensor*) { out.push_back(name); }, false);
    return out;
}

std::size_t Sequential::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += layer_param_count(l);
    return n;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::state() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        collect_params(layers_[i], i, [&](const std::string& name, Tensor* t) { out.emplace_back(name, t); }, true);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Sequential::state() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        collect_params(layers_[i], i, [&](const std::string& name, const Tensor* t) { out.emplace_back(name, t); },
                       true);
    return out;
}

ParamGrads Sequential::zero_grads() const {
    ParamGrads g;
    for (const Tensor* p : parameters()) g.grads.emplace_back(p->shape());
    return g;
}

void Sequential::commit_batch_stats(const ForwardTrace& trace) {
    if (trace.batch_stats.size() != layers_.size()) throw ShapeError("forward trace does not match network");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto* bn = std::get_if<layers::BatchNorm>(&layers_[i]);
        if (!bn) continue;
        const BatchStats& s = trace.batch_stats[i];
        if (s.mean.empty()) throw ConfigError("no batch statistics recorded for layer " + std::to_string(i));
        const double unbias = s.count > 1 ? static_cast<double>(s.count) / static_cast<double>(s.count - 1) : 1.0;
        for (std::size_t c = 0; c < bn->gamma.size(); ++c) {
            bn->running_mean[c] = bn->momentum * bn->running_mean[c] + (1.0 - bn->momentum) * s.mean[c];
            bn->running_var[c] = bn->momentum * bn->running_var[c] + (1.0 - bn->momentum) * s.var[c] * unbias;
        }
    }
}

// ---- networks --------------------------------------------------------------

GeneratorNet::GeneratorNet(ImageShape image, Sequential body, Mode mode)
    : image_(image), body_(std::move(body)), mode_(mode) {
    if (body_.input_shape().size() != 1) throw ShapeError("generator input must be a flat latent vector");
    const Shape& out = body_.output_shape();
    const bool chw = out == Shape{image_.channels, image_.height, image_.width};
    const bool flat = out == Shape{image_.numel()};
    if (!chw && !flat) {
        throw ShapeError("generator output " + shape_to_string(out) + " does not match image " + to_string(image_));
    }
}

DiscriminatorNet::DiscriminatorNet(ImageShape image, Sequential body) : image_(image), body_(std::move(body)) {
    if (body_.input_shape() != Shape{image_.channels, image_.height, image_.width}) {
        throw ShapeError("discriminator input must be channel-major " + to_string(image_));
    }
    if (shape_numel(body_.output_shape()) != 1) throw ShapeError("discriminator must produce one logit");
}

Tensor hwc_to_chw(const Tensor& batch) {
    if (batch.rank() != 4) throw ShapeError("expected {N,H,W,C} batch, got " + shape_to_string(batch.shape()));
    const auto n = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
    Tensor out({n, c, h, w});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t k = 0; k < c; ++k)
                    out[((b * c + k) * h + y) * w + x] = batch[((b * h + y) * w + x) * c + k];
    return out;
}

Tensor chw_to_hwc(const Tensor& batch) {
    if (batch.rank() != 4) throw ShapeError("expected {N,C,H,W} batch, got " + shape_to_string(batch.shape()));
    const auto n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor out({n, h, w, c});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    out[((b * h + y) * w + x) * c + k] = batch[((b * c + k) * h + y) * w + x];
    return out;
}

namespace {

Tensor body_to_image(const GeneratorNet& net, const Tensor& body_out) {
    const auto& s = net.image_shape();
    const std::size_t n = body_out.dim(0);
    if (net.channel_major() && s.channels > 1) return chw_to_hwc(body_out);
    return body_out.reshaped({n, s.height, s.width, s.channels});
}

Tensor image_to_body(const GeneratorNet& net, const Tensor& images) {
    const std::size_t n = images.dim(0);
    if (net.channel_major() && net.image_shape().channels > 1) return hwc_to_chw(images);
    return images.reshaped(batched(n, net.body().output_shape()));
}

Tensor latent_batch(const GeneratorNet& net, const LatentVector& z) {
    if (z.dim() != net.input_dim()) {
        throw ShapeError("latent dimension " + std::to_string(z.dim()) + " does not match generator input " +
                         std::to_string(net.input_dim()));
    }
    return Tensor({1, z.dim()}, z.storage());
}

}  // namespace

Tensor gen_forward_batch(const GeneratorNet& net, const Tensor& z_batch, Mode mode, ForwardTrace* trace) {
    return body_to_image(net, net.body().forward(z_batch, mode, trace));
}

Tensor gen_forward(const GeneratorNet& net, const LatentVector& z) {
    Tensor out = gen_forward_batch(net, latent_batch(net, z), net.mode());
    out.reshape(net.image_shape().hwc());
    return out;
}

double loss_mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "loss_mse");
    if (a.empty()) throw ShapeError("loss_mse: empty tensors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

LossAndGrad gen_loss_and_grad_z(const GeneratorNet& net, const LatentVector& z, const Tensor& target) {
    if (target.shape() != net.image_shape().hwc()) {
        throw ShapeError("target shape " + shape_to_string(target.shape()) + " does not match generator image " +
                         to_string(net.image_shape()));
    }
    ForwardTrace trace;
    const Mode mode = net.mode();
    Tensor out = net.body().forward(latent_batch(net, z), mode, &trace);
    const Tensor target_body = image_to_body(net, target.reshaped(batched(1, target.shape())));
    Tensor grad_out(out.shape());
    const double inv_n = 1.0 / static_cast<double>(out.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = out[i] - target_body[i];
        loss += d * d;
        grad_out[i] = 2.0 * d * inv_n;
    }
    Tensor gz = net.body().backward(trace, grad_out, mode, nullptr, true);
    return {loss * inv_n, std::vector<double>(gz.storage().begin(), gz.storage().end())};
}

std::vector<double> gen_backward_z(const GeneratorNet& net, const LatentVector& z, const Tensor& target) {
    return gen_loss_and_grad_z(net, z, target).grad;
}

ParamGrads gen_backward_params(const GeneratorNet& net, const Tensor& z_batch, const Tensor& upstream) {
    ForwardTrace trace;
    Tensor out = gen_forward_batch(net, z_batch, Mode::training, &trace);
    require_same_shape(out, upstream, "gen_backward_params");
    ParamGrads grads = net.body().zero_grads();
    net.body().backward(trace, image_to_body(net, upstream), Mode::training, &grads, false);
    return grads;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(0) != x.dim(0) || w.dim(2) != w.dim(3)) {
        throw ShapeError("conv2d_transpose: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                         shape_to_string(w.shape()));
    }
    if (stride <= 0 || pad < 0) throw ConfigError("conv2d_transpose: stride must be positive, pad nonnegative");
    const int k = static_cast<int>(w.dim(2));
    if (tconv_out_size(x.dim(1), k, stride, pad) <= 0 || tconv_out_size(x.dim(2), k, stride, pad) <= 0) {
        throw ConfigError("conv2d_transpose: nonpositive output size");
    }
    layers::ConvTranspose2d layer{w, Tensor({w.dim(1)}, 0.0), stride, pad};
    Sequential seq(x.shape(), {layer});
    Tensor y = seq.forward(x.reshaped(batched(1, x.shape())), Mode::inference);
    y.reshape(seq.output_shape());
    return y;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> v, double eps) {
    if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
    std::vector<double> point(v.begin(), v.end());
    std::vector<double> grad(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double orig = point[i];
        point[i] = orig + eps;
        const double fp = f(point);
        point[i] = orig - eps;
        const double fm = f(point);
        point[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite function value at component " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

GeneratorNet make_dcgan_generator(const GeneratorProfile& profile, std::uint64_t seed) {
    if (profile.latent_dim == 0 || profile.channels == 0) throw ConfigError("generator profile needs d >= 1, C >= 1");
    RandomStream rng(derive_seed(seed, {0x67656eULL}));
    const std::size_t d = profile.latent_dim, c = profile.channels;
    std::vector<Layer> ls;
    ls.emplace_back(layers::Dense{normal_tensor({4 * 4 * 128, d}, 0.02, rng), Tensor({4 * 4 * 128}, 0.0)});
    ls.emplace_back(layers::Reshape{{128, 4, 4}});
    ls.emplace_back(fresh_batch_norm(128));
    ls.emplace_back(layers::Relu{});
    ls.emplace_back(layers::ConvTranspose2d{normal_tensor({128, 64, 4, 4}, 0.02, rng), Tensor({64}, 0.0), 2, 1});
    ls.emplace_back(fresh_batch_norm(64));
    ls.emplace_back(layers::Relu{});
    ls.emplace_back(layers::ConvTranspose2d{normal_tensor({64, 32, 4, 4}, 0.02, rng), Tensor({32}, 0.0), 2, 1});
    ls.emplace_back(fresh_batch_norm(32));
    ls.emplace_back(layers::Relu{});
    ls.emplace_back(layers::ConvTranspose2d{normal_tensor({32, c, 4, 4}, 0.02, rng), Tensor({c}, 0.0), 2, 1});
    ls.emplace_back(layers::Tanh{});
    return GeneratorNet({32, 32, c}, Sequential({d}, std::move(ls)), Mode::inference);
}

DiscriminatorNet make_dcgan_discriminator(std::size_t channels, std::uint64_t seed, std::size_t width) {
    if (channels == 0) throw ConfigError("discriminator needs at least one channel");
    if (width == 0) throw ConfigError("discriminator width must be positive");
    const std::size_t w1 = width, w2 = 2 * width, w3 = 4 * width;
    RandomStream rng(derive_seed(seed, {0x646973ULL}));
    std::vector<Layer> ls;
    ls.emplace_back(layers::Conv2d{normal_tensor({w1, channels, 4, 4}, 0.02, rng), Tensor({w1}, 0.0), 2, 1});
    ls.emplace_back(layers::LeakyRelu{0.2});
    ls.emplace_back(layers::Conv2d{normal_tensor({w2, w1, 4, 4}, 0.02, rng), Tensor({w2}, 0.0), 2, 1});
    ls.emplace_back(layers::LeakyRelu{0.2});
    ls.emplace_back(layers::Conv2d{normal_tensor({w3, w2, 4, 4}, 0.02, rng), Tensor({w3}, 0.0), 2, 1});
    ls.emplace_back(layers::LeakyRelu{0.2});
    ls.emplace_back(layers::Reshape{{w3 * 4 * 4}});
    ls.emplace_back(layers::Dense{Tensor({1, w3 * 4 * 4}, 0.0), Tensor({1}, 0.0)});
    return DiscriminatorNet({32, 32, channels}, Sequential({channels, 32, 32}, std::move(ls)));
}

GeneratorNet make_identity_generator(std::size_t dim) {
    Tensor w({dim, dim}, 0.0);
    for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
    return GeneratorNet({1, dim, 1}, Sequential({dim}, {layers::Dense{std::move(w), Tensor({dim}, 0.0)}}));
}

GeneratorNet make_linear_generator(const Tensor& a, const Tensor& b, ImageShape image) {
    if (a.rank() != 2 || a.dim(0) != image.numel()) {
        throw ShapeError("linear generator matrix must be (" + std::to_string(image.numel()) + " x d)");
    }
    return GeneratorNet(image, Sequential({a.dim(1)}, {layers::Dense{a, b}}));
}

}  // namespace ganproj
