#include "clab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace clab {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<detail::Node>;

std::string mismatch(const char *op, const Shape &a, const Shape &b) {
    return std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b);
}

// Creates the output node and records the backward rule when any input tracks
// gradients and recording is enabled.
Tensor make_result(Shape shape, std::vector<float> data, const char *op, std::vector<NodePtr> inputs,
                   std::function<void(detail::Node &)> backward_fn) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool track = false;
    if (g_grad_enabled) {
        for (const auto &in : inputs) {
            if (in && in->requires_grad) track = true;
        }
    }
    if (track) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor::wrap(std::move(node));
}

bool wants_grad(const NodePtr &n) { return n && n->requires_grad; }

enum class Binary { Add, Sub, Mul };

Tensor binary(const Tensor &a, const Tensor &b, Binary kind, const char *name) {
    const bool same = a.shape() == b.shape();
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (!same && !a_scalar && !b_scalar) throw ShapeError(mismatch(name, a.shape(), b.shape()));

    const Shape out_shape = (same || b_scalar) ? a.shape() : b.shape();
    const std::size_t n = numel(out_shape);
    std::vector<float> out(n);
    auto ad = a.data();
    auto bd = b.data();
    const std::size_t sa = a_scalar && !same ? 0 : 1;
    const std::size_t sb = b_scalar && !same ? 0 : 1;
    for (std::size_t i = 0; i < n; ++i) {
        const float x = ad[i * sa];
        const float y = bd[i * sb];
        switch (kind) {
            case Binary::Add: out[i] = x + y; break;
            case Binary::Sub: out[i] = x - y; break;
            case Binary::Mul: out[i] = x * y; break;
        }
    }

    NodePtr an = a.node();
    NodePtr bn = b.node();
    return make_result(out_shape, std::move(out), name, {an, bn}, [an, bn, kind, sa, sb](detail::Node &self) {
        const std::size_t n = self.grad.size();
        if (wants_grad(an)) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                float g = self.grad[i];
                if (kind == Binary::Mul) g *= bn->data[i * sb];
                an->grad[i * sa] += g;
            }
        }
        if (wants_grad(bn)) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                float g = self.grad[i];
                if (kind == Binary::Sub) g = -g;
                if (kind == Binary::Mul) g *= an->data[i * sa];
                bn->grad[i * sb] += g;
            }
        }
    });
}

template <class F, class DF>
Tensor unary(const Tensor &x, const char *name, F f, DF df) {
    const std::size_t n = x.size();
    std::vector<float> out(n);
    auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(xd[i]);
    NodePtr xn = x.node();
    return make_result(x.shape(), std::move(out), name, {xn}, [xn, df](detail::Node &self) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * df(xn->data[i]);
    });
}

void require_rank4(const char *op, const Tensor &x) {
    if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected [N,C,H,W], got " + shape_str(x.shape()));
}

// Column matrix for one sample: rows (c, ky, kx), columns (y, x).
void im2col(const float *img, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, float *cols) {
    const long pad = static_cast<long>(k / 2);
    const long H = static_cast<long>(h);
    const long W = static_cast<long>(w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        const float *plane = img + c * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                float *dst = cols + row * h * w;
                const long dy = static_cast<long>(ky) - pad;
                const long dx = static_cast<long>(kx) - pad;
                const long x0 = std::max(0L, -dx);
                const long x1 = std::min(W, W - dx);
                for (long y = 0; y < H; ++y) {
                    float *drow = dst + y * W;
                    const long sy = y + dy;
                    if (sy < 0 || sy >= H) {
                        std::fill(drow, drow + W, 0.0f);
                        continue;
                    }
                    const float *srow = plane + sy * W + dx;
                    for (long x = 0; x < x0; ++x) drow[x] = 0.0f;
                    for (long x = x0; x < x1; ++x) drow[x] = srow[x];
                    for (long x = std::max(x0, x1); x < W; ++x) drow[x] = 0.0f;
                }
            }
        }
    }
}

void col2im_add(const float *cols, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, float *img) {
    const long pad = static_cast<long>(k / 2);
    const long H = static_cast<long>(h);
    const long W = static_cast<long>(w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        float *plane = img + c * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                const float *src = cols + row * h * w;
                const long dy = static_cast<long>(ky) - pad;
                const long dx = static_cast<long>(kx) - pad;
                const long x0 = std::max(0L, -dx);
                const long x1 = std::min(W, W - dx);
                for (long y = 0; y < H; ++y) {
                    const long sy = y + dy;
                    if (sy < 0 || sy >= H) continue;
                    const float *srow = src + y * W;
                    float *drow = plane + sy * W + dx;
                    for (long x = x0; x < x1; ++x) drow[x] += srow[x];
                }
            }
        }
    }
}

}  // namespace

std::size_t numel(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

bool all_finite(std::span<const float> values) {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

void detail::Node::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Shape shape, float fill, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
    }
    node_->data.assign(numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
    }
    if (numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(float v, bool requires_grad) { return Tensor({1}, std::vector<float>{v}, requires_grad); }

Tensor Tensor::from(std::initializer_list<float> values, bool requires_grad) {
    return Tensor({values.size()}, std::vector<float>(values), requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= rank()) throw ShapeError("dim " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return node_->shape[i];
}

float Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

void Tensor::backward() {
    if (size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
    if (!node_->requires_grad) throw std::logic_error("backward: loss is not connected to any parameter");

    // Reverse post-order DFS gives a topological order.
    std::vector<detail::Node *> order;
    std::unordered_set<detail::Node *> seen;
    std::vector<std::pair<detail::Node *, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto &[n, next] = stack.back();
        if (next < n->inputs.size()) {
            detail::Node *child = n->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node *n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
        if (!n->is_leaf()) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace ops {

Tensor add(const Tensor &a, const Tensor &b) { return binary(a, b, Binary::Add, "add"); }
Tensor sub(const Tensor &a, const Tensor &b) { return binary(a, b, Binary::Sub, "sub"); }
Tensor mul(const Tensor &a, const Tensor &b) { return binary(a, b, Binary::Mul, "mul"); }

Tensor scale(const Tensor &a, float s) {
    return unary(a, "scale", [s](float v) { return v * s; }, [s](float) { return s; });
}

Tensor matmul(const Tensor &a, const Tensor &b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw ShapeError(mismatch("matmul", a.shape(), b.shape()));
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<float> out(static_cast<std::size_t>(m * n));
    MapMat(out.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);

    NodePtr an = a.node();
    NodePtr bn = b.node();
    return make_result({a.dim(0), b.dim(1)}, std::move(out), "matmul", {an, bn}, [an, bn, m, k, n](detail::Node &self) {
        CMapMat g(self.grad.data(), m, n);
        if (wants_grad(an)) {
            an->ensure_grad();
            MapMat(an->grad.data(), m, k).noalias() += g * CMapMat(bn->data.data(), k, n).transpose();
        }
        if (wants_grad(bn)) {
            bn->ensure_grad();
            MapMat(bn->grad.data(), k, n).noalias() += CMapMat(an->data.data(), m, k).transpose() * g;
        }
    });
}

Tensor conv2d(const Tensor &x, const Tensor &weight, const Tensor &bias) {
    require_rank4("conv2d", x);
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0 || weight.dim(1) != x.dim(1)) {
        throw ShapeError(mismatch("conv2d", x.shape(), weight.shape()));
    }
    const bool has_bias = bias.size() > 0 && bias.rank() > 0;
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
        throw ShapeError(mismatch("conv2d(bias)", weight.shape(), bias.shape()));
    }
    const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t cout = weight.dim(0), k = weight.dim(2);
    const std::size_t hw = h * w;
    const std::size_t patch = cin * k * k;
    const auto ep = static_cast<Eigen::Index>(patch);
    const auto eo = static_cast<Eigen::Index>(cout);
    const auto ehw = static_cast<Eigen::Index>(hw);

    std::vector<float> out(batch * cout * hw);
    std::vector<float> cols(k == 1 ? 0 : patch * hw);
    CMapMat wm(weight.data().data(), eo, ep);
    for (std::size_t n = 0; n < batch; ++n) {
        const float *img = x.data().data() + n * cin * hw;
        const float *cp = img;
        if (k != 1) {
            im2col(img, cin, h, w, k, cols.data());
            cp = cols.data();
        }
        MapMat om(out.data() + n * cout * hw, eo, ehw);
        om.noalias() = wm * CMapMat(cp, ep, ehw);
        if (has_bias) {
            for (std::size_t c = 0; c < cout; ++c) om.row(static_cast<Eigen::Index>(c)).array() += bias[c];
        }
    }

    NodePtr xn = x.node();
    NodePtr wn = weight.node();
    NodePtr bn = has_bias ? bias.node() : nullptr;
    return make_result({batch, cout, h, w}, std::move(out), "conv2d", {xn, wn, bn},
                       [=](detail::Node &self) {
                           std::vector<float> cols(k == 1 ? 0 : patch * hw);
                           std::vector<float> dcols(k == 1 ? 0 : patch * hw);
                           if (wants_grad(xn)) xn->ensure_grad();
                           if (wants_grad(wn)) wn->ensure_grad();
                           if (wants_grad(bn)) bn->ensure_grad();
                           CMapMat wm(wn->data.data(), eo, ep);
                           for (std::size_t n = 0; n < batch; ++n) {
                               CMapMat g(self.grad.data() + n * cout * hw, eo, ehw);
                               if (wants_grad(bn)) {
                                   for (std::size_t c = 0; c < cout; ++c) {
                                       double s = 0.0;
                                       const float *gr = self.grad.data() + (n * cout + c) * hw;
                                       for (std::size_t i = 0; i < hw; ++i) s += gr[i];
                                       bn->grad[c] += static_cast<float>(s);
                                   }
                               }
                               const float *img = xn->data.data() + n * cin * hw;
                               if (wants_grad(wn)) {
                                   const float *cp = img;
                                   if (k != 1) {
                                       im2col(img, cin, h, w, k, cols.data());
                                       cp = cols.data();
                                   }
                                   MapMat(wn->grad.data(), eo, ep).noalias() += g * CMapMat(cp, ep, ehw).transpose();
                               }
                               if (wants_grad(xn)) {
                                   float *dimg = xn->grad.data() + n * cin * hw;
                                   if (k == 1) {
                                       MapMat(dimg, ep, ehw).noalias() += wm.transpose() * g;
                                   } else {
                                       MapMat(dcols.data(), ep, ehw).noalias() = wm.transpose() * g;
                                       col2im_add(dcols.data(), cin, h, w, k, dimg);
                                   }
                               }
                           }
                       });
}

Tensor silu(const Tensor &x) {
    return unary(
        x, "silu", [](float v) { return v / (1.0f + std::exp(-v)); },
        [](float v) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return s * (1.0f + v * (1.0f - s));
        });
}

Tensor relu(const Tensor &x) {
    return unary(x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor abs(const Tensor &x) {
    return unary(
        x, "abs", [](float v) { return std::fabs(v); },
        [](float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor sum(const Tensor &x) {
    double s = 0.0;
    for (float v : x.data()) s += v;
    NodePtr xn = x.node();
    return make_result({1}, {static_cast<float>(s)}, "sum", {xn}, [xn](detail::Node &self) {
        xn->ensure_grad();
        const float g = self.grad[0];
        for (auto &v : xn->grad) v += g;
    });
}

Tensor mean(const Tensor &x) {
    double s = 0.0;
    for (float v : x.data()) s += v;
    const double n = static_cast<double>(x.size());
    NodePtr xn = x.node();
    return make_result({1}, {static_cast<float>(s / n)}, "mean", {xn}, [xn, n](detail::Node &self) {
        xn->ensure_grad();
        const float g = static_cast<float>(self.grad[0] / n);
        for (auto &v : xn->grad) v += g;
    });
}

Tensor concat_channels(const Tensor &a, const Tensor &b) {
    if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0) ||
        !std::equal(a.shape().begin() + 2, a.shape().end(), b.shape().begin() + 2)) {
        throw ShapeError(mismatch("concat_channels", a.shape(), b.shape()));
    }
    const std::size_t batch = a.dim(0);
    const std::size_t block_a = a.size() / batch;
    const std::size_t block_b = b.size() / batch;
    Shape shape = a.shape();
    shape[1] += b.dim(1);
    std::vector<float> out(a.size() + b.size());
    for (std::size_t n = 0; n < batch; ++n) {
        std::copy_n(a.data().data() + n * block_a, block_a, out.data() + n * (block_a + block_b));
        std::copy_n(b.data().data() + n * block_b, block_b, out.data() + n * (block_a + block_b) + block_a);
    }
    NodePtr an = a.node();
    NodePtr bn = b.node();
    return make_result(shape, std::move(out), "concat_channels", {an, bn},
                       [an, bn, batch, block_a, block_b](detail::Node &self) {
                           const std::size_t stride = block_a + block_b;
                           if (wants_grad(an)) {
                               an->ensure_grad();
                               for (std::size_t n = 0; n < batch; ++n)
                                   for (std::size_t i = 0; i < block_a; ++i)
                                       an->grad[n * block_a + i] += self.grad[n * stride + i];
                           }
                           if (wants_grad(bn)) {
                               bn->ensure_grad();
                               for (std::size_t n = 0; n < batch; ++n)
                                   for (std::size_t i = 0; i < block_b; ++i)
                                       bn->grad[n * block_b + i] += self.grad[n * stride + block_a + i];
                           }
                       });
}

Tensor downsample2x(const Tensor &x) {
    require_rank4("downsample2x", x);
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw ShapeError("downsample2x: spatial extents must be even, got " + shape_str(x.shape()));
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<float> out(planes * oh * ow);
    auto xd = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const float *src = xd.data() + p * h * w;
        float *dst = out.data() + p * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
                const float *s = src + 2 * i * w + 2 * j;
                dst[i * ow + j] = 0.25f * (s[0] + s[1] + s[w] + s[w + 1]);
            }
        }
    }
    NodePtr xn = x.node();
    return make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), "downsample2x", {xn},
                       [xn, planes, h, w, oh, ow](detail::Node &self) {
                           xn->ensure_grad();
                           for (std::size_t p = 0; p < planes; ++p) {
                               float *d = xn->grad.data() + p * h * w;
                               const float *g = self.grad.data() + p * oh * ow;
                               for (std::size_t i = 0; i < oh; ++i) {
                                   for (std::size_t j = 0; j < ow; ++j) {
                                       const float v = 0.25f * g[i * ow + j];
                                       float *s = d + 2 * i * w + 2 * j;
                                       s[0] += v;
                                       s[1] += v;
                                       s[w] += v;
                                       s[w + 1] += v;
                                   }
                               }
                           }
                       });
}

Tensor upsample2x(const Tensor &x) {
    require_rank4("upsample2x", x);
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = 2 * h, ow = 2 * w;
    std::vector<float> out(planes * oh * ow);
    auto xd = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const float *src = xd.data() + p * h * w;
        float *dst = out.data() + p * oh * ow;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / 2) * w + j / 2];
    }
    NodePtr xn = x.node();
    return make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), "upsample2x", {xn},
                       [xn, planes, h, w, oh, ow](detail::Node &self) {
                           xn->ensure_grad();
                           for (std::size_t p = 0; p < planes; ++p) {
                               float *d = xn->grad.data() + p * h * w;
                               const float *g = self.grad.data() + p * oh * ow;
                               for (std::size_t i = 0; i < oh; ++i)
                                   for (std::size_t j = 0; j < ow; ++j) d[(i / 2) * w + j / 2] += g[i * ow + j];
                           }
                       });
}

Tensor affine_scale_shift(const Tensor &x, const Tensor &scale, const Tensor &shift) {
    if (x.rank() < 2) throw ShapeError("affine_scale_shift: expected [N,C,...], got " + shape_str(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const std::size_t inner = x.size() / (batch * channels);
    // Returns true when the modulation is per sample ([N,C]), false for [C].
    auto check = [&](const Tensor &t, const char *what) -> bool {
        if (t.shape() == Shape{channels}) return false;
        if (t.shape() == Shape{batch, channels}) return true;
        throw ShapeError(std::string("affine_scale_shift(") + what + "): " + mismatch("affine_scale_shift", x.shape(), t.shape()));
    };
    const bool has_scale = scale.rank() > 0;
    const bool has_shift = shift.rank() > 0;
    const bool scale_per_sample = has_scale && check(scale, "scale");
    const bool shift_per_sample = has_shift && check(shift, "shift");

    std::vector<float> out(x.size());
    auto xd = x.data();
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const float s = has_scale ? 1.0f + scale[scale_per_sample ? n * channels + c : c] : 1.0f;
            const float b = has_shift ? shift[shift_per_sample ? n * channels + c : c] : 0.0f;
            const std::size_t base = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) out[base + i] = xd[base + i] * s + b;
        }
    }

    NodePtr xn = x.node();
    NodePtr sn = has_scale ? scale.node() : nullptr;
    NodePtr bn = has_shift ? shift.node() : nullptr;
    return make_result(x.shape(), std::move(out), "affine_scale_shift", {xn, sn, bn},
                       [=](detail::Node &self) {
                           if (wants_grad(xn)) xn->ensure_grad();
                           if (wants_grad(sn)) sn->ensure_grad();
                           if (wants_grad(bn)) bn->ensure_grad();
                           for (std::size_t n = 0; n < batch; ++n) {
                               for (std::size_t c = 0; c < channels; ++c) {
                                   const std::size_t si = scale_per_sample ? n * channels + c : c;
                                   const std::size_t bi = shift_per_sample ? n * channels + c : c;
                                   const float s = sn ? 1.0f + sn->data[si] : 1.0f;
                                   const std::size_t base = (n * channels + c) * inner;
                                   double gs = 0.0, gb = 0.0;
                                   for (std::size_t i = 0; i < inner; ++i) {
                                       const float g = self.grad[base + i];
                                       if (wants_grad(xn)) xn->grad[base + i] += g * s;
                                       gs += static_cast<double>(g) * xn->data[base + i];
                                       gb += g;
                                   }
                                   if (wants_grad(sn)) sn->grad[si] += static_cast<float>(gs);
                                   if (wants_grad(bn)) bn->grad[bi] += static_cast<float>(gb);
                               }
                           }
                       });
}

Tensor reshape(const Tensor &x, Shape shape) {
    if (numel(shape) != x.size()) throw ShapeError(mismatch("reshape", x.shape(), shape));
    std::vector<float> out(x.data().begin(), x.data().end());
    NodePtr xn = x.node();
    return make_result(std::move(shape), std::move(out), "reshape", {xn}, [xn](detail::Node &self) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
}

}  // namespace ops

}  // namespace clab
