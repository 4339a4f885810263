#include "petrel/tensor.hpp"

#include "petrel/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace petrel::ad {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dim");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << shape[i] << (i + 1 < shape.size() ? "," : "");
    os << ")";
    return os.str();
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    if (values.size() != n)
        throw std::invalid_argument("tensor value count " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    if (requires_grad) t.d_->grad.assign(n, 0.0);
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return leaf(std::move(shape), std::vector<double>(n, value), requires_grad);
}

double Tensor::scalar() const {
    if (size() != 1) throw std::invalid_argument("scalar() on tensor of size " + std::to_string(size()));
    return d_->values[0];
}

void Tensor::zero_grad() const {
    if (has_grad()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Graph::make_output(Shape shape) {
    const std::size_t n = shape_numel(shape);
    Tensor t;
    t.d_ = std::make_shared<Tensor::Data>();
    t.d_->shape = std::move(shape);
    t.d_->values.assign(n, 0.0);
    t.d_->grad.assign(n, 0.0);
    t.d_->op_output = true;
    pending_output_ = t;
    return t;
}

void Graph::record(const char* name, std::function<void()> backward) {
    if (!pending_output_.defined())
        throw std::logic_error("Graph::record without a pending make_output");
    nodes_.push_back(Node{name, pending_output_, std::move(backward)});
    pending_output_ = Tensor{};
}

void Graph::backward(const Tensor& loss, double seed) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward requires a scalar loss tensor");
    if (!loss.is_op_output())
        throw std::invalid_argument("backward requires a loss produced by this graph");
    // Intermediates are zeroed and rebuilt per call; leaves keep accumulating.
    for (auto& node : nodes_) node.output.zero_grad();
    loss.d_->grad[0] = seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (it->backward) it->backward();
}

void ensure_finite(const Tensor& t, const char* op) {
    for (double v : t.values())
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by ") + op);
}

namespace {

void check_3d(const Tensor& t, const char* op) {
    if (t.rank() != 3)
        throw std::invalid_argument(std::string(op) + ": expected rank-3 tensor, got " +
                                    shape_str(t.shape()));
}

} // namespace

Tensor conv2d_valid(Graph& g, const Tensor& input, const Tensor& weights,
                    const Tensor& bias) {
    check_3d(input, "conv2d_valid");
    if (weights.rank() != 4)
        throw std::invalid_argument("conv2d_valid: weights must be (O,C,kh,kw)");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    if (weights.dim(1) != C)
        throw std::invalid_argument("conv2d_valid: weight channels " + std::to_string(weights.dim(1)) +
                                    " != input channels " + std::to_string(C));
    if (bias.rank() != 1 || bias.dim(0) != O)
        throw std::invalid_argument("conv2d_valid: bias shape mismatch");
    if (H < kh || W < kw)
        throw std::invalid_argument("conv2d_valid: input " + shape_str(input.shape()) +
                                    " smaller than kernel");
    const int Ho = H - kh + 1, Wo = W - kw + 1;

    Tensor out = g.make_output({O, Ho, Wo});
    {
        const double* in = input.values().data();
        const double* wt = weights.values().data();
        const double* bs = bias.values().data();
        double* ov = out.values().data();
        par::parallel_for(0, static_cast<std::size_t>(O) * Ho, [&](std::size_t t) {
            const int o = static_cast<int>(t) / Ho;
            const int y = static_cast<int>(t) % Ho;
            double* orow = ov + (static_cast<std::size_t>(o) * Ho + y) * Wo;
            std::fill(orow, orow + Wo, bs[o]);
            for (int c = 0; c < C; ++c) {
                for (int i = 0; i < kh; ++i) {
                    const double* irow = in + (static_cast<std::size_t>(c) * H + y + i) * W;
                    const double* wrow = wt + ((static_cast<std::size_t>(o) * C + c) * kh + i) * kw;
                    for (int j = 0; j < kw; ++j) {
                        const double wv = wrow[j];
                        const double* ishift = irow + j;
                        for (int x = 0; x < Wo; ++x) orow[x] += wv * ishift[x];
                    }
                }
            }
        });
    }
    ensure_finite(out, "conv2d_valid");

    g.record("conv2d_valid", [input, weights, bias, out, C, H, W, O, Ho, Wo, kh, kw]() {
        const double* gout = out.grad().data();
        if (bias.has_grad()) {
            double* gb = bias.grad().data();
            for (int o = 0; o < O; ++o) {
                double acc = 0.0;
                const double* gplane = gout + static_cast<std::size_t>(o) * Ho * Wo;
                for (int t = 0; t < Ho * Wo; ++t) acc += gplane[t];
                gb[o] += acc;
            }
        }
        if (weights.has_grad()) {
            const double* in = input.values().data();
            double* gw = weights.grad().data();
            par::parallel_for(0, static_cast<std::size_t>(O) * C, [&](std::size_t t) {
                const int o = static_cast<int>(t) / C;
                const int c = static_cast<int>(t) % C;
                for (int i = 0; i < kh; ++i) {
                    for (int j = 0; j < kw; ++j) {
                        double acc = 0.0;
                        for (int y = 0; y < Ho; ++y) {
                            const double* irow = in + (static_cast<std::size_t>(c) * H + y + i) * W + j;
                            const double* grow = gout + (static_cast<std::size_t>(o) * Ho + y) * Wo;
                            for (int x = 0; x < Wo; ++x) acc += irow[x] * grow[x];
                        }
                        gw[((static_cast<std::size_t>(o) * C + c) * kh + i) * kw + j] += acc;
                    }
                }
            });
        }
        if (input.has_grad()) {
            const double* wt = weights.values().data();
            double* gin = input.grad().data();
            par::parallel_for(0, static_cast<std::size_t>(C), [&](std::size_t c) {
                for (int o = 0; o < O; ++o) {
                    for (int i = 0; i < kh; ++i) {
                        for (int j = 0; j < kw; ++j) {
                            const double wv =
                                wt[((static_cast<std::size_t>(o) * C + c) * kh + i) * kw + j];
                            for (int y = 0; y < Ho; ++y) {
                                double* grow = gin + (c * static_cast<std::size_t>(H) + y + i) * W + j;
                                const double* gorow = gout + (static_cast<std::size_t>(o) * Ho + y) * Wo;
                                for (int x = 0; x < Wo; ++x) grow[x] += wv * gorow[x];
                            }
                        }
                    }
                }
            });
        }
    });
    return out;
}

Tensor maxpool2(Graph& g, const Tensor& input) {
    check_3d(input, "maxpool2");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("maxpool2: odd spatial dimension in " + shape_str(input.shape()));
    const int Ho = H / 2, Wo = W / 2;

    Tensor out = g.make_output({C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    {
        const double* in = input.values().data();
        double* ov = out.values().data();
        std::size_t* am = argmax->data();
        for (int c = 0; c < C; ++c) {
            for (int y = 0; y < Ho; ++y) {
                for (int x = 0; x < Wo; ++x) {
                    const std::size_t base = (static_cast<std::size_t>(c) * H + 2 * y) * W + 2 * x;
                    const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
                    std::size_t best = cand[0];
                    double bv = in[best];
                    for (int k = 1; k < 4; ++k) {
                        if (in[cand[k]] > bv) { // strict: first index wins ties
                            bv = in[cand[k]];
                            best = cand[k];
                        }
                    }
                    const std::size_t oi = (static_cast<std::size_t>(c) * Ho + y) * Wo + x;
                    ov[oi] = bv;
                    am[oi] = best;
                }
            }
        }
    }
    ensure_finite(out, "maxpool2");

    g.record("maxpool2", [input, out, argmax]() {
        if (!input.has_grad()) return;
        double* gin = input.grad().data();
        const double* gout = out.grad().data();
        const std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i) gin[(*argmax)[i]] += gout[i];
    });
    return out;
}

namespace {

struct LerpTap {
    int i0, i1;
    double w0, w1;
};

// Source taps for align-corners=false factor-2 interpolation.
LerpTap bilinear_tap(int out_index, int in_size) {
    const double src = 0.5 * (out_index + 0.5) - 0.5;
    const double f = std::floor(src);
    const double frac = src - f;
    int i0 = static_cast<int>(f);
    int i1 = i0 + 1;
    i0 = std::clamp(i0, 0, in_size - 1);
    i1 = std::clamp(i1, 0, in_size - 1);
    return {i0, i1, 1.0 - frac, frac};
}

} // namespace

Tensor upsample_bilinear2(Graph& g, const Tensor& input) {
    check_3d(input, "upsample_bilinear2");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int Ho = 2 * H, Wo = 2 * W;

    std::vector<LerpTap> ys(Ho), xs(Wo);
    for (int y = 0; y < Ho; ++y) ys[y] = bilinear_tap(y, H);
    for (int x = 0; x < Wo; ++x) xs[x] = bilinear_tap(x, W);

    Tensor out = g.make_output({C, Ho, Wo});
    {
        const double* in = input.values().data();
        double* ov = out.values().data();
        for (int c = 0; c < C; ++c) {
            const double* plane = in + static_cast<std::size_t>(c) * H * W;
            for (int y = 0; y < Ho; ++y) {
                const LerpTap ty = ys[y];
                const double* r0 = plane + static_cast<std::size_t>(ty.i0) * W;
                const double* r1 = plane + static_cast<std::size_t>(ty.i1) * W;
                double* orow = ov + (static_cast<std::size_t>(c) * Ho + y) * Wo;
                for (int x = 0; x < Wo; ++x) {
                    const LerpTap tx = xs[x];
                    orow[x] = ty.w0 * (tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1]) +
                              ty.w1 * (tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1]);
                }
            }
        }
    }
    ensure_finite(out, "upsample_bilinear2");

    auto ysv = std::make_shared<std::vector<LerpTap>>(std::move(ys));
    auto xsv = std::make_shared<std::vector<LerpTap>>(std::move(xs));
    g.record("upsample_bilinear2", [input, out, ysv, xsv, C, H, W, Ho, Wo]() {
        if (!input.has_grad()) return;
        double* gin = input.grad().data();
        const double* gout = out.grad().data();
        for (int c = 0; c < C; ++c) {
            double* gplane = gin + static_cast<std::size_t>(c) * H * W;
            for (int y = 0; y < Ho; ++y) {
                const LerpTap ty = (*ysv)[y];
                const double* gorow = gout + (static_cast<std::size_t>(c) * Ho + y) * Wo;
                for (int x = 0; x < Wo; ++x) {
                    const LerpTap tx = (*xsv)[x];
                    const double gv = gorow[x];
                    gplane[ty.i0 * W + tx.i0] += ty.w0 * tx.w0 * gv;
                    gplane[ty.i0 * W + tx.i1] += ty.w0 * tx.w1 * gv;
                    gplane[ty.i1 * W + tx.i0] += ty.w1 * tx.w0 * gv;
                    gplane[ty.i1 * W + tx.i1] += ty.w1 * tx.w1 * gv;
                }
            }
        }
    });
    return out;
}

Tensor crop_concat(Graph& g, const Tensor& high_res, const Tensor& low_res) {
    check_3d(high_res, "crop_concat");
    check_3d(low_res, "crop_concat");
    const int C1 = high_res.dim(0), H1 = high_res.dim(1), W1 = high_res.dim(2);
    const int C2 = low_res.dim(0), H2 = low_res.dim(1), W2 = low_res.dim(2);
    if (H1 < H2 || W1 < W2)
        throw std::invalid_argument("crop_concat: high_res smaller than low_res");
    if ((H1 - H2) % 2 != 0 || (W1 - W2) % 2 != 0)
        throw std::invalid_argument("crop_concat: odd crop margin between " +
                                    shape_str(high_res.shape()) + " and " +
                                    shape_str(low_res.shape()));
    const int my = (H1 - H2) / 2, mx = (W1 - W2) / 2;

    Tensor out = g.make_output({C1 + C2, H2, W2});
    {
        const double* hi = high_res.values().data();
        const double* lo = low_res.values().data();
        double* ov = out.values().data();
        for (int c = 0; c < C1; ++c)
            for (int y = 0; y < H2; ++y) {
                const double* src = hi + (static_cast<std::size_t>(c) * H1 + y + my) * W1 + mx;
                double* dst = ov + (static_cast<std::size_t>(c) * H2 + y) * W2;
                std::copy(src, src + W2, dst);
            }
        std::copy(lo, lo + static_cast<std::size_t>(C2) * H2 * W2,
                  ov + static_cast<std::size_t>(C1) * H2 * W2);
    }
    ensure_finite(out, "crop_concat");

    g.record("crop_concat", [high_res, low_res, out, C1, C2, H1, W1, H2, W2, my, mx]() {
        const double* gout = out.grad().data();
        if (high_res.has_grad()) {
            double* gh = high_res.grad().data();
            for (int c = 0; c < C1; ++c)
                for (int y = 0; y < H2; ++y) {
                    double* dst = gh + (static_cast<std::size_t>(c) * H1 + y + my) * W1 + mx;
                    const double* src = gout + (static_cast<std::size_t>(c) * H2 + y) * W2;
                    for (int x = 0; x < W2; ++x) dst[x] += src[x];
                }
        }
        if (low_res.has_grad()) {
            double* gl = low_res.grad().data();
            const double* src = gout + static_cast<std::size_t>(C1) * H2 * W2;
            const std::size_t n = static_cast<std::size_t>(C2) * H2 * W2;
            for (std::size_t i = 0; i < n; ++i) gl[i] += src[i];
        }
    });
    return out;
}

Tensor relu(Graph& g, const Tensor& t) {
    Tensor out = g.make_output(t.shape());
    const double* in = t.values().data();
    double* ov = out.values().data();
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) ov[i] = in[i] > 0.0 ? in[i] : 0.0;
    ensure_finite(out, "relu");

    g.record("relu", [t, out, n]() {
        if (!t.has_grad()) return;
        double* gin = t.grad().data();
        const double* gout = out.grad().data();
        const double* in = t.values().data();
        for (std::size_t i = 0; i < n; ++i)
            if (in[i] > 0.0) gin[i] += gout[i];
    });
    return out;
}

Tensor sigmoid(Graph& g, const Tensor& t) {
    Tensor out = g.make_output(t.shape());
    const double* in = t.values().data();
    double* ov = out.values().data();
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = in[i];
        if (x >= 0.0) {
            ov[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            ov[i] = e / (1.0 + e);
        }
    }
    ensure_finite(out, "sigmoid");

    g.record("sigmoid", [t, out, n]() {
        if (!t.has_grad()) return;
        double* gin = t.grad().data();
        const double* gout = out.grad().data();
        const double* s = out.values().data();
        for (std::size_t i = 0; i < n; ++i) gin[i] += s[i] * (1.0 - s[i]) * gout[i];
    });
    return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out = g.make_output(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
    ensure_finite(out, "mul");

    g.record("mul", [a, b, out, n]() {
        const double* gout = out.grad().data();
        if (a.has_grad()) {
            double* ga = a.grad().data();
            const double* bv = b.values().data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += bv[i] * gout[i];
        }
        if (b.has_grad()) {
            double* gb = b.grad().data();
            const double* av = a.values().data();
            for (std::size_t i = 0; i < n; ++i) gb[i] += av[i] * gout[i];
        }
    });
    return out;
}

Tensor sum(Graph& g, const Tensor& t) {
    Tensor out = g.make_output({1});
    double acc = 0.0;
    for (double v : t.values()) acc += v;
    out.values()[0] = acc;
    ensure_finite(out, "sum");

    g.record("sum", [t, out]() {
        if (!t.has_grad()) return;
        const double gv = out.grad()[0];
        for (double& gi : t.grad()) gi += gv;
    });
    return out;
}

Tensor scale(Graph& g, const Tensor& t, double factor) {
    Tensor out = g.make_output(t.shape());
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = factor * t.values()[i];
    ensure_finite(out, "scale");

    g.record("scale", [t, out, factor, n]() {
        if (!t.has_grad()) return;
        double* gin = t.grad().data();
        const double* gout = out.grad().data();
        for (std::size_t i = 0; i < n; ++i) gin[i] += factor * gout[i];
    });
    return out;
}

} // namespace petrel::ad
