#pragma once

// Dense float32 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle onto a node of the computation graph. Operations
// on tensors that require gradients record a backward rule on the output node;
// backward() walks the graph in reverse topological order and accumulates
// gradients into every leaf that requires them.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape &shape);
std::string shape_str(const Shape &shape);

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class Tensor;

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until the first accumulation
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this->grad, accumulates into inputs' grads.
    std::function<void(Node &)> backward_fn;

    bool is_leaf() const { return inputs.empty(); }
    void ensure_grad();
};

}  // namespace detail

class Tensor {
   public:
    Tensor();
    explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
    Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

    static Tensor scalar(float v, bool requires_grad = false);
    static Tensor from(std::initializer_list<float> values, bool requires_grad = false);

    const Shape &shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const;
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    std::span<float> data() { return node_->data; }
    std::span<const float> data() const { return node_->data; }
    float item() const;
    float &operator[](std::size_t i) { return node_->data[i]; }
    float operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<float> grad() { return node_->grad; }
    std::span<const float> grad() const { return node_->grad; }
    void zero_grad();
    void clear_grad() { node_->grad.clear(); }

    const std::string &op() const { return node_->op; }

    // Copy of the values without graph history.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    void backward();

    const std::shared_ptr<detail::Node> &node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node);

   private:
    std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

   private:
    bool previous_;
};

bool grad_enabled();

namespace ops {

// Elementwise, same shape or one side scalar (numel 1).
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, float s);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor &a, const Tensor &b);

// x [N,Cin,H,W], weight [Cout,Cin,k,k] with odd k, bias [Cout] or empty.
// Stride 1, zero "same" padding.
Tensor conv2d(const Tensor &x, const Tensor &weight, const Tensor &bias = Tensor());

Tensor silu(const Tensor &x);
Tensor relu(const Tensor &x);
Tensor abs(const Tensor &x);

// Full reductions to a scalar; accumulation in double.
Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);

// Concatenation along axis 1; all other extents must agree.
Tensor concat_channels(const Tensor &a, const Tensor &b);

// [N,C,H,W] average pooling by 2 / nearest-neighbor upsampling by 2.
Tensor downsample2x(const Tensor &x);
Tensor upsample2x(const Tensor &x);

// x [N,C,...] -> x * (1 + scale) + shift, with scale/shift of shape [C] or
// [N,C]. Either may be an empty Tensor.
Tensor affine_scale_shift(const Tensor &x, const Tensor &scale, const Tensor &shift);

Tensor reshape(const Tensor &x, Shape shape);

}  // namespace ops

inline Tensor operator+(const Tensor &a, const Tensor &b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return ops::mul(a, b); }

bool all_finite(std::span<const float> values);

}  // namespace clab
