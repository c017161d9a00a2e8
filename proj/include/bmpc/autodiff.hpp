#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bmpc/tensor.hpp"

namespace bmpc::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the reverse-mode graph. `grad` is allocated lazily and always
// matches `value` in shape once allocated.
struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;
    bool is_parameter = false;
    std::string name;

    Tensor& grad_buffer();
    bool has_grad() const { return grad.size() == value.size() && value.size() > 0; }
};

// Handle to a graph node. Cheap to copy; copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const;
    Tensor& mutable_grad() { return node_->grad_buffer(); }
    const std::vector<std::size_t>& shape() const { return node_->value.shape(); }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }
    double item() const { return node_->value.item(); }
    void zero_grad();

    const NodePtr& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    NodePtr node_;
};

Var constant(Tensor value);
Var parameter(Tensor value, std::string name);

// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

// Elementwise on identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);

// [N,K] x [K,M] -> [N,M]
Var matmul(const Var& a, const Var& b);
// [N,D] + [D] row-broadcast; the only broadcast supported.
Var add_bias(const Var& x, const Var& bias);

// Reductions. sum/mean produce a scalar; sum_cols reduces [N,D] -> [N].
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_cols(const Var& a);

// Row-wise over the last axis of [N,D].
Var softmax(const Var& logits);
Var log_softmax(const Var& logits);
// Per-row cross-entropy -sum_j p_j log softmax(logits)_j -> [N]. Targets carry no gradient.
Var cross_entropy(const Var& logits, const Tensor& target_probs);
// Row-wise normalization with learned gain and bias of shape [D].
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, std::vector<std::size_t> shape);
Var detach(const Var& a);

// Reverse pass from a scalar. Parameter gradients accumulate; intermediate
// gradients are released afterwards.
void backward(const Var& loss);

}  // namespace bmpc::ad
