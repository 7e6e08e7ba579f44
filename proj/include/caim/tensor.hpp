#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace caim {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// One node of the dynamic autodiff tape. Nodes form a DAG through `parents`;
// `backprop` reads this node's grad and accumulates into the parents' grads.
// The graph is recorded only along paths that require gradients and is freed
// by backward(); a second backward over a consumed graph throws.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same size as data
    bool requires_grad = false;
    bool graph_consumed = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backprop;

    std::size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantics handle over a shared tape node. All data is 64-bit float,
// row-major.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    const std::vector<double>& data() const { return node_->data; }
    // In-place access for parameter updates and buffer fills; never use on a
    // tensor that is already part of a recorded graph.
    std::vector<double>& mutable_data() { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;

    // Same values, detached from the tape.
    Tensor detach() const;

    // Reverse-mode sweep from a scalar. Populates grad on every reachable
    // tensor with requires_grad, then frees the interior of the graph.
    // Calling it again on the same graph throws. A scalar that requires no
    // grad at all is a documented no-op.
    void backward();

    std::shared_ptr<TensorNode> node() const { return node_; }
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<TensorNode> node_;
};

// Per-(sample, channel) spatial statistics of an N x C x H x W feature map,
// both shaped N x C and differentiable. std = sqrt(population variance + eps).
struct ChannelStats {
    Tensor mean;
    Tensor std;
};

// ---- elementwise / broadcasting ops (NumPy-style trailing alignment) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// y = scale * x + shift
Tensor affine(const Tensor& x, double scale, double shift);
Tensor relu(const Tensor& x);
// Requires x >= 0; derivative is taken as 0.5/sqrt(x) so inputs must be
// strictly positive wherever gradients are needed.
Tensor sqrt(const Tensor& x);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim);

Tensor reshape(const Tensor& x, Shape shape);

// ---- NN primitives ----
// input N x D_in, weight D_out x D_in, bias D_out  ->  N x D_out
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

// input N x C_in x H x W, weight C_out x C_in x k x k, bias C_out.
// Direct convolution (cross-correlation), evaluated via an im2col buffer with
// the same per-output accumulation order as the naive loop nest.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);

// N x C x H x W -> N x C spatial mean
Tensor global_average_pool(const Tensor& input);

ChannelStats instance_stats(const Tensor& input, double epsilon);

// logits N x K, labels in [0, K); returns mean cross-entropy as a scalar.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// Rows rescaled to unit Euclidean norm; rejects zero rows.
Tensor l2_normalize_rows(const Tensor& x);

}  // namespace caim
