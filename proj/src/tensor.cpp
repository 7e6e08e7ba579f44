#include "caim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace caim {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

std::shared_ptr<TensorNode> make_node(Shape shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(shape_size(n->shape), 0.0);
    return n;
}

// Attaches parents and a backprop closure only when some parent needs
// gradients; otherwise the result is a plain constant and no tape grows.
Tensor finish(std::shared_ptr<TensorNode> out,
              std::vector<std::shared_ptr<TensorNode>> parents,
              std::function<void()> backprop) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    if (rg) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backprop = std::move(backprop);
    }
    return Tensor(std::move(out));
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t d = shape.size(); d-- > 1;) s[d - 1] = s[d] * shape[d];
    return s;
}

struct BinPlan {
    Shape out;
    std::vector<std::size_t> sa, sb;  // per-out-dim strides, 0 where broadcast
    bool same_shape;
};

BinPlan plan_binary(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return BinPlan{a, {}, {}, true};
    std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    Shape ea(r, 1), eb(r, 1);
    std::copy(a.begin(), a.end(), ea.begin() + (r - a.size()));
    std::copy(b.begin(), b.end(), eb.begin() + (r - b.size()));
    for (std::size_t d = 0; d < r; ++d) {
        if (ea[d] == eb[d] || ea[d] == 1 || eb[d] == 1) {
            out[d] = std::max(ea[d], eb[d]);
        } else {
            throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                        shape_str(b) + " are not broadcastable");
        }
    }
    auto stna = row_major_strides(ea), stnb = row_major_strides(eb);
    BinPlan p{out, std::vector<std::size_t>(r), std::vector<std::size_t>(r), false};
    for (std::size_t d = 0; d < r; ++d) {
        p.sa[d] = (ea[d] == 1 && out[d] != 1) ? 0 : stna[d];
        p.sb[d] = (eb[d] == 1 && out[d] != 1) ? 0 : stnb[d];
    }
    return p;
}

// Odometer walk over the broadcast output space, tracking both input offsets.
template <class F>
void bcast_iterate(const Shape& out, const std::vector<std::size_t>& sa,
                   const std::vector<std::size_t>& sb, F&& body) {
    std::size_t r = out.size();
    std::size_t total = shape_size(out);
    if (r == 0) {
        if (total) body(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t ai = 0, bi = 0;
    for (std::size_t oi = 0; oi < total; ++oi) {
        body(oi, ai, bi);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ai += sa[d];
            bi += sb[d];
            if (idx[d] < out[d]) break;
            ai -= sa[d] * out[d];
            bi -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    BinPlan plan = plan_binary(a.shape(), b.shape(), name);
    auto out = make_node(plan.out);
    const auto& da = a.node()->data;
    const auto& db = b.node()->data;
    auto& dout = out->data;
    if (plan.same_shape) {
        for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = fwd(da[i], db[i]);
    } else {
        bcast_iterate(plan.out, plan.sa, plan.sb,
                      [&](std::size_t oi, std::size_t ai, std::size_t bi) {
                          dout[oi] = fwd(da[ai], db[bi]);
                      });
    }
    TensorNode* an = a.node().get();
    TensorNode* bn = b.node().get();
    TensorNode* on = out.get();
    return finish(out, {a.node(), b.node()}, [an, bn, on, plan, bwd]() {
        const bool ga = an->requires_grad, gb = bn->requires_grad;
        if (plan.same_shape) {
            for (std::size_t i = 0; i < on->data.size(); ++i)
                bwd(on->grad[i], an->data[i], bn->data[i], on->data[i],
                    ga ? &an->grad[i] : nullptr, gb ? &bn->grad[i] : nullptr);
        } else {
            bcast_iterate(plan.out, plan.sa, plan.sb,
                          [&](std::size_t oi, std::size_t ai, std::size_t bi) {
                              bwd(on->grad[oi], an->data[ai], bn->data[bi], on->data[oi],
                                  ga ? &an->grad[ai] : nullptr, gb ? &bn->grad[bi] : nullptr);
                          });
        }
    });
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = make_node(std::move(shape));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = make_node(std::move(shape));
    std::fill(n->data.begin(), n->data.end(), value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_size(shape) != data.size())
        throw std::invalid_argument("from_data: shape " + shape_str(shape) + " needs " +
                                    std::to_string(shape_size(shape)) + " values, got " +
                                    std::to_string(data.size()));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw std::runtime_error("grad: no gradient recorded for this tensor");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor has shape " + shape_str(shape()));
    return node_->data[0];
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->data = node_->data;
    return Tensor(std::move(n));
}

void Tensor::backward() {
    if (!node_) throw std::runtime_error("backward: empty tensor");
    if (node_->size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(node_->shape));
    if (!node_->requires_grad) return;  // nothing recorded: documented no-op
    if (node_->graph_consumed)
        throw std::runtime_error("backward: graph already consumed; rerun the forward pass");

    // Reverse DFS post-order = topological order with consumers first. The
    // order holds shared ownership: freeing a node's parent list must not
    // destroy nodes the sweep still has to visit.
    std::vector<std::shared_ptr<TensorNode>> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        std::shared_ptr<TensorNode> n;
        std::size_t next;
    };
    std::vector<Frame> stack{{node_, 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            const std::shared_ptr<TensorNode>& p = f.n->parents[f.next++];
            if (!p->requires_grad || seen.count(p.get())) continue;
            if (p->graph_consumed)
                throw std::runtime_error(
                    "backward: graph shares a subgraph already consumed by a previous backward");
            seen.insert(p.get());
            stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = it->get();
        if (!n->backprop) continue;
        for (auto& p : n->parents)
            if (p->requires_grad) p->ensure_grad();
        n->backprop();
        n->backprop = nullptr;
        n->parents.clear();
        n->graph_consumed = true;
    }
    node_->graph_consumed = true;
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double go, double, double, double, double* gx, double* gy) {
            if (gx) *gx += go;
            if (gy) *gy += go;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double go, double, double, double, double* gx, double* gy) {
            if (gx) *gx += go;
            if (gy) *gy -= go;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double go, double x, double y, double, double* gx, double* gy) {
            if (gx) *gx += go * y;
            if (gy) *gy += go * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double go, double, double y, double out, double* gx, double* gy) {
            if (gx) *gx += go / y;
            if (gy) *gy -= go * out / y;
        });
}

Tensor affine(const Tensor& x, double scale, double shift) {
    auto out = make_node(x.shape());
    const auto& xd = x.node()->data;
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = scale * xd[i] + shift;
    TensorNode* xn = x.node().get();
    TensorNode* on = out.get();
    return finish(out, {x.node()}, [xn, on, scale]() {
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += scale * on->grad[i];
    });
}

Tensor relu(const Tensor& x) {
    auto out = make_node(x.shape());
    const auto& xd = x.node()->data;
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    TensorNode* xn = x.node().get();
    TensorNode* on = out.get();
    return finish(out, {x.node()}, [xn, on]() {
        // subgradient at 0 taken as 0
        for (std::size_t i = 0; i < on->grad.size(); ++i)
            if (xn->data[i] > 0.0) xn->grad[i] += on->grad[i];
    });
}

Tensor sqrt(const Tensor& x) {
    auto out = make_node(x.shape());
    const auto& xd = x.node()->data;
    for (std::size_t i = 0; i < xd.size(); ++i) {
        if (xd[i] < 0.0) throw std::invalid_argument("sqrt: negative input");
        out->data[i] = std::sqrt(xd[i]);
    }
    TensorNode* xn = x.node().get();
    TensorNode* on = out.get();
    return finish(out, {x.node()}, [xn, on]() {
        for (std::size_t i = 0; i < on->grad.size(); ++i)
            xn->grad[i] += on->grad[i] * 0.5 / on->data[i];
    });
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
    auto out = make_node({1});
    double acc = 0.0;
    for (double v : x.node()->data) acc += v;
    out->data[0] = acc;
    TensorNode* xn = x.node().get();
    TensorNode* on = out.get();
    return finish(out, {x.node()}, [xn, on]() {
        double g = on->grad[0];
        for (double& gi : xn->grad) gi += g;
    });
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
    const Shape& in = x.shape();
    std::vector<bool> reduced(in.size(), false);
    for (std::size_t a : axes) {
        if (a >= in.size()) throw std::invalid_argument("sum: axis out of range");
        reduced[a] = true;
    }
    Shape kshape(in);
    for (std::size_t d = 0; d < in.size(); ++d)
        if (reduced[d]) kshape[d] = 1;

    auto out = make_node(kshape);
    auto ostr = row_major_strides(kshape);
    std::vector<std::size_t> omap(in.size());
    for (std::size_t d = 0; d < in.size(); ++d) omap[d] = reduced[d] ? 0 : ostr[d];

    const auto& xd = x.node()->data;
    auto& od = out->data;
    bcast_iterate(in, omap, omap, [&](std::size_t ii, std::size_t oi, std::size_t) {
        od[oi] += xd[ii];
    });

    TensorNode* xn = x.node().get();
    TensorNode* on = out.get();
    Shape in_copy = in;
    Tensor res = finish(out, {x.node()}, [xn, on, in_copy, omap]() {
        bcast_iterate(in_copy, omap, omap, [&](std::size_t ii, std::size_t oi, std::size_t) {
            xn->grad[ii] += on->grad[oi];
        });
    });
    if (keepdim) return res;
    Shape squeezed;
    for (std::size_t d = 0; d < in.size(); ++d)
        if (!reduced[d]) squeezed.push_back(in[d]);
    if (squeezed.empty()) squeezed.push_back(1);
    return reshape(res, squeezed);
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
    std::size_t count = 1;
    for (std::size_t a : axes) {
        if (a >= x.rank()) throw std::invalid_argument("mean: axis out of range");
        count *= x.shape()[a];
    }
    if (count == 0) throw std::invalid_argument("mean: reducing over an empty extent");
    return affine(sum(x, axes, keepdim), 1.0 / static_cast<double>(count), 0.0);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(shape));
    auto out = std::make_shared<TensorNode>();
    out->shape = std::move(shape);
    out->data = x.node()->data;
    TensorNode* xn = x.node().get();
    TensorNode* on = out.get();
    return finish(out, {x.node()}, [xn, on]() {
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
}

// ---- NN primitives ----

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 2 || weight.rank() != 2)
        throw std::invalid_argument("dense: input and weight must be rank 2, got " +
                                    shape_str(input.shape()) + " and " + shape_str(weight.shape()));
    const std::size_t n = input.shape()[0], din = input.shape()[1];
    const std::size_t dout = weight.shape()[0];
    if (weight.shape()[1] != din)
        throw std::invalid_argument("dense: weight " + shape_str(weight.shape()) +
                                    " does not match input " + shape_str(input.shape()));
    if (bias.size() != dout)
        throw std::invalid_argument("dense: bias size " + std::to_string(bias.size()) +
                                    " != output dim " + std::to_string(dout));

    auto out = make_node({n, dout});
    const double* xd = input.node()->data.data();
    const double* wd = weight.node()->data.data();
    const double* bd = bias.node()->data.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* xrow = xd + i * din;
        for (std::size_t o = 0; o < dout; ++o) {
            const double* wrow = wd + o * din;
            double acc = bd[o];
            for (std::size_t d = 0; d < din; ++d) acc += xrow[d] * wrow[d];
            out->data[i * dout + o] = acc;
        }
    }

    TensorNode* xn = input.node().get();
    TensorNode* wn = weight.node().get();
    TensorNode* bn = bias.node().get();
    TensorNode* on = out.get();
    return finish(out, {input.node(), weight.node(), bias.node()}, [=]() {
        const double* go = on->grad.data();
        if (xn->requires_grad) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < dout; ++o) {
                    double g = go[i * dout + o];
                    const double* wrow = wn->data.data() + o * din;
                    double* gx = xn->grad.data() + i * din;
                    for (std::size_t d = 0; d < din; ++d) gx[d] += g * wrow[d];
                }
        }
        if (wn->requires_grad) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < dout; ++o) {
                    double g = go[i * dout + o];
                    const double* xrow = xn->data.data() + i * din;
                    double* gw = wn->grad.data() + o * din;
                    for (std::size_t d = 0; d < din; ++d) gw[d] += g * xrow[d];
                }
        }
        if (bn->requires_grad) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < dout; ++o) bn->grad[o] += go[i * dout + o];
        }
    });
}

namespace {

struct ConvDims {
    std::size_t n, cin, h, w, cout, k, stride, pad, ho, wo;
    std::size_t rows() const { return cin * k * k; }
    std::size_t cols() const { return ho * wo; }
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   std::size_t stride, std::size_t padding) {
    if (input.rank() != 4)
        throw std::invalid_argument("conv2d: input must be N x C x H x W, got " +
                                    shape_str(input.shape()));
    if (weight.rank() != 4 || weight.shape()[2] != weight.shape()[3])
        throw std::invalid_argument("conv2d: weight must be Cout x Cin x k x k, got " +
                                    shape_str(weight.shape()));
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    ConvDims d;
    d.n = input.shape()[0];
    d.cin = input.shape()[1];
    d.h = input.shape()[2];
    d.w = input.shape()[3];
    d.cout = weight.shape()[0];
    d.k = weight.shape()[2];
    d.stride = stride;
    d.pad = padding;
    if (weight.shape()[1] != d.cin)
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight.shape()[1]) +
                                    " input channels, input has " + std::to_string(d.cin));
    if (bias.size() != d.cout)
        throw std::invalid_argument("conv2d: bias size " + std::to_string(bias.size()) +
                                    " != output channels " + std::to_string(d.cout));
    if (d.h + 2 * d.pad < d.k || d.w + 2 * d.pad < d.k)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    d.ho = (d.h + 2 * d.pad - d.k) / d.stride + 1;
    d.wo = (d.w + 2 * d.pad - d.k) / d.stride + 1;
    return d;
}

// col is rows() x cols(), row index r = (ci*k + ky)*k + kx. The GEMM below
// accumulates over r in ascending order, which reproduces the naive
// ci -> ky -> kx loop nest sum order exactly.
void im2col(const double* in, const ConvDims& d, double* col) {
    const std::size_t J = d.cols();
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const double* plane = in + ci * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky)
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                double* crow = col + ((ci * d.k + ky) * d.k + kx) * J;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                                        static_cast<std::ptrdiff_t>(d.pad);
                    double* crow_y = crow + oy * d.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
                        std::fill(crow_y, crow_y + d.wo, 0.0);
                        continue;
                    }
                    const double* irow = plane + static_cast<std::size_t>(iy) * d.w;
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                            static_cast<std::ptrdiff_t>(d.pad);
                        crow_y[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w))
                                         ? 0.0
                                         : irow[static_cast<std::size_t>(ix)];
                    }
                }
            }
    }
}

void col2im_add(const double* col, const ConvDims& d, double* gin) {
    const std::size_t J = d.cols();
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
        double* plane = gin + ci * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky)
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                const double* crow = col + ((ci * d.k + ky) * d.k + kx) * J;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                                        static_cast<std::ptrdiff_t>(d.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                    double* irow = plane + static_cast<std::size_t>(iy) * d.w;
                    const double* crow_y = crow + oy * d.wo;
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                            static_cast<std::ptrdiff_t>(d.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                        irow[static_cast<std::size_t>(ix)] += crow_y[ox];
                    }
                }
            }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    ConvDims d = conv_dims(input, weight, bias, stride, padding);
    const std::size_t R = d.rows(), J = d.cols();

    auto out = make_node({d.n, d.cout, d.ho, d.wo});
    std::vector<double> col(R * J);
    const double* xd = input.node()->data.data();
    const double* wd = weight.node()->data.data();
    const double* bd = bias.node()->data.data();
    for (std::size_t i = 0; i < d.n; ++i) {
        im2col(xd + i * d.cin * d.h * d.w, d, col.data());
        for (std::size_t co = 0; co < d.cout; ++co) {
            double* orow = out->data.data() + (i * d.cout + co) * J;
            std::fill(orow, orow + J, bd[co]);
            const double* wrow = wd + co * R;
            for (std::size_t r = 0; r < R; ++r) {
                const double wv = wrow[r];
                const double* crow = col.data() + r * J;
                for (std::size_t j = 0; j < J; ++j) orow[j] += wv * crow[j];
            }
        }
    }

    TensorNode* xn = input.node().get();
    TensorNode* wn = weight.node().get();
    TensorNode* bn = bias.node().get();
    TensorNode* on = out.get();
    return finish(out, {input.node(), weight.node(), bias.node()}, [=]() {
        const std::size_t Rr = d.rows(), Jj = d.cols();
        std::vector<double> colbuf;
        std::vector<double> dcol;
        if (wn->requires_grad) colbuf.resize(Rr * Jj);
        if (xn->requires_grad) dcol.resize(Rr * Jj);
        for (std::size_t i = 0; i < d.n; ++i) {
            const double* go = on->grad.data() + i * d.cout * Jj;
            if (bn->requires_grad) {
                for (std::size_t co = 0; co < d.cout; ++co) {
                    double acc = 0.0;
                    const double* grow = go + co * Jj;
                    for (std::size_t j = 0; j < Jj; ++j) acc += grow[j];
                    bn->grad[co] += acc;
                }
            }
            if (wn->requires_grad) {
                im2col(xn->data.data() + i * d.cin * d.h * d.w, d, colbuf.data());
                for (std::size_t co = 0; co < d.cout; ++co) {
                    const double* grow = go + co * Jj;
                    double* gw = wn->grad.data() + co * Rr;
                    for (std::size_t r = 0; r < Rr; ++r) {
                        const double* crow = colbuf.data() + r * Jj;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < Jj; ++j) acc += grow[j] * crow[j];
                        gw[r] += acc;
                    }
                }
            }
            if (xn->requires_grad) {
                std::fill(dcol.begin(), dcol.end(), 0.0);
                for (std::size_t co = 0; co < d.cout; ++co) {
                    const double* grow = go + co * Jj;
                    const double* wrow = wn->data.data() + co * Rr;
                    for (std::size_t r = 0; r < Rr; ++r) {
                        const double wv = wrow[r];
                        double* drow = dcol.data() + r * Jj;
                        for (std::size_t j = 0; j < Jj; ++j) drow[j] += wv * grow[j];
                    }
                }
                col2im_add(dcol.data(), d, xn->grad.data() + i * d.cin * d.h * d.w);
            }
        }
    });
}

Tensor global_average_pool(const Tensor& input) {
    if (input.rank() != 4)
        throw std::invalid_argument("global_average_pool: input must be N x C x H x W, got " +
                                    shape_str(input.shape()));
    const std::size_t n = input.shape()[0], c = input.shape()[1];
    const std::size_t hw = input.shape()[2] * input.shape()[3];
    if (hw == 0) throw std::invalid_argument("global_average_pool: zero spatial extent");

    auto out = make_node({n, c});
    const double* xd = input.node()->data.data();
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        const double* p = xd + i * hw;
        for (std::size_t j = 0; j < hw; ++j) acc += p[j];
        out->data[i] = acc / static_cast<double>(hw);
    }

    TensorNode* xn = input.node().get();
    TensorNode* on = out.get();
    return finish(out, {input.node()}, [xn, on, n, c, hw]() {
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t i = 0; i < n * c; ++i) {
            const double g = on->grad[i] * inv;
            double* p = xn->grad.data() + i * hw;
            for (std::size_t j = 0; j < hw; ++j) p[j] += g;
        }
    });
}

ChannelStats instance_stats(const Tensor& input, double epsilon) {
    if (input.rank() != 4)
        throw std::invalid_argument("instance_stats: input must be N x C x H x W, got " +
                                    shape_str(input.shape()));
    if (!(epsilon > 0.0)) throw std::invalid_argument("instance_stats: epsilon must be > 0");
    const std::size_t n = input.shape()[0], c = input.shape()[1];
    Tensor mu = mean(input, {2, 3}, true);
    Tensor centered = sub(input, mu);
    Tensor var = mean(mul(centered, centered), {2, 3}, true);
    Tensor sd = sqrt(affine(var, 1.0, epsilon));
    return ChannelStats{reshape(mu, {n, c}), reshape(sd, {n, c})};
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be N x K");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    if (labels.size() != n)
        throw std::invalid_argument("softmax_cross_entropy: got " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    for (std::size_t lbl : labels)
        if (lbl >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");

    auto probs = std::make_shared<std::vector<double>>(n * k);
    const double* xd = logits.node()->data.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = xd + i * k;
        double m = row[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
        double lse = m + std::log(z);
        for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - m) / z;
        total += lse - row[labels[i]];
    }
    auto out = make_node({1});
    out->data[0] = total / static_cast<double>(n);

    TensorNode* xn = logits.node().get();
    TensorNode* on = out.get();
    auto lbl = labels;
    return finish(out, {logits.node()}, [xn, on, probs, lbl, n, k]() {
        const double g = on->grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j)
                xn->grad[i * k + j] += g * ((*probs)[i * k + j] - (j == lbl[i] ? 1.0 : 0.0));
    });
}

Tensor l2_normalize_rows(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("l2_normalize_rows: input must be N x D");
    Tensor ssq = sum(mul(x, x), {1}, true);
    for (double v : ssq.data())
        if (!(v > 0.0)) throw std::runtime_error("l2_normalize_rows: zero-norm row");
    return div(x, sqrt(ssq));
}

}  // namespace caim
