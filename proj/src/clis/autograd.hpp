#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
// Every op records its inputs only when one of them requires a gradient, so
// constants and detached values never grow the graph.

#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "clis/common.hpp"

namespace clis::ag {

using Shape = std::vector<int>;

/// 64-byte aligned allocations. Vectorized kernels peel loops by address alignment, so
/// unaligned buffers would make sums differ in the last bits from run to run.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlign = 64;

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
        void* p = std::aligned_alloc(kAlign, bytes == 0 ? kAlign : bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) { std::free(p); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel(const Shape& shape);

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    bool requires_grad = false;
    bool is_leaf = true;

    double* ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    static Var constant(Shape shape, std::vector<double> values);
    static Var constant(Shape shape, Buffer values);
    static Var constant(Shape shape, std::initializer_list<double> values) {
        return constant(std::move(shape), Buffer(values));
    }
    static Var zeros(Shape shape);
    static Var scalar(double v);
    /// Leaf that accumulates gradients.
    static Var parameter(Shape shape, std::vector<double> values);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return node_->value.size(); }
    std::span<const double> value() const { return node_->value; }
    std::span<double> mutable_value() { return node_->value; }
    /// Empty span when no gradient has reached this node.
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }
    double item() const;
    bool requires_grad() const { return node_->requires_grad; }
    Var detach() const;

    Node* node() const { return node_.get(); }
    const NodePtr& ptr() const { return node_; }

private:
    NodePtr node_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
void backward(const Var& loss);

/// Builds an op result. Inputs and the backward closure are kept only when one
/// of the inputs requires a gradient; the closure reads self.grad and
/// accumulates into input->ensure_grad().
Var make_result(Shape shape, Buffer value, const std::vector<Var>& inputs, std::function<void(Node&)> backward_fn);
Var make_result(Shape shape, const std::vector<double>& value, const std::vector<Var>& inputs,
                std::function<void(Node&)> backward_fn);
inline Var make_result(Shape shape, std::initializer_list<double> value, const std::vector<Var>& inputs,
                       std::function<void(Node&)> backward_fn) {
    return make_result(std::move(shape), Buffer(value), inputs, std::move(backward_fn));
}

// Shapes: images are [C, H, W]; matrices are [N, D]; scalars are [].

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var relu(const Var& x);
Var linear(const Var& x, const Var& weight, const Var& bias);
Var reshape(const Var& x, Shape shape);
/// out[i] = x[index[i]] over the flattened input; backward scatter-adds.
Var gather(const Var& x, std::vector<int> index, Shape shape);
Var concat_rows(const std::vector<Var>& parts);
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var sum(const Var& x);
/// Scalar sum of a list of scalars.
Var add_n(const std::vector<Var>& terms);

/// Mean softmax cross-entropy over rows; labels index columns. Zero rows gives a constant 0.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
/// Mean binary cross-entropy with logits over all elements.
Var bce_with_logits(const Var& logits, const std::vector<double>& targets);
/// Sum of smooth-L1 over all elements of pred - target, divided by normalizer.
Var smooth_l1(const Var& pred, const std::vector<double>& target, double beta, double normalizer);
/// Row-wise L2 normalization. Zero rows map to the first basis vector and are flagged.
Var l2_normalize_rows(const Var& x, std::vector<bool>* zero_rows = nullptr);

/// Pools a pool x pool grid per box from one level of a feature pyramid.
/// Sample (i, j) of a box sits at the bin center
///   fx = (x0 + (j + 0.5) * w / pool) / stride - 0.5,  fy likewise with y0, h, i,
/// clamped to [0, W-1] x [0, H-1] and read by bilinear interpolation.
/// Output is [N, C * pool * pool] laid out channel-major.
Var roi_align(const std::vector<Var>& levels, const std::vector<int>& strides,
              const std::vector<Box>& boxes, const std::vector<int>& box_levels, int pool);

}  // namespace clis::ag
