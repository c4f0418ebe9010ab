#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tofdetect/layers.hpp"

// Reverse-mode differentiation over the layer kernels. A Tape records every
// op of one forward pass; backward() replays the recorded closures in reverse.

namespace tofd {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty shape until something flows back
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Node&)> backward_fn;

    void accumulate(const Tensor<T>& g);
    void zero_grad() {
        has_grad = false;
        grad = Tensor<T>();
    }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
NodePtr<T> make_leaf(Tensor<T> value, bool requires_grad);

template <class T>
class Tape {
public:
    /// A tape built with record_grad = false keeps nothing alive and produces
    /// nodes that never require gradients (inference).
    explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}

    /// Records an op output. The closure receives the output node and must
    /// push its gradient into the inputs it captured.
    NodePtr<T> record(Tensor<T> value, bool requires_grad, std::function<void(Node<T>&)> backward_fn);

    /// Seeds `output` with `seed_grad` and runs every recorded closure in reverse.
    void backward(const NodePtr<T>& output, const Tensor<T>& seed_grad);

    void clear() { nodes_.clear(); }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    bool record_grad_;
    std::vector<NodePtr<T>> nodes_;
};

namespace ag {

template <class T>
NodePtr<T> conv3d(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& weights, const NodePtr<T>& bias, int stride);

template <class T>
NodePtr<T> instance_norm(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& gamma, const NodePtr<T>& beta, T eps);

template <class T>
NodePtr<T> leaky_relu(Tape<T>& tape, const NodePtr<T>& x, T slope);

template <class T>
NodePtr<T> dropout(Tape<T>& tape, const NodePtr<T>& x, double p_drop, Rng& rng, bool training);

template <class T>
NodePtr<T> add(Tape<T>& tape, const NodePtr<T>& a, const NodePtr<T>& b);

template <class T>
NodePtr<T> concat(Tape<T>& tape, const NodePtr<T>& a, const NodePtr<T>& b);

template <class T>
NodePtr<T> upsample(Tape<T>& tape, const NodePtr<T>& x, int factor);

template <class T>
NodePtr<T> global_max_pool(Tape<T>& tape, const NodePtr<T>& x);

template <class T>
NodePtr<T> dense(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& weights, const NodePtr<T>& bias);

template <class T>
NodePtr<T> sigmoid(Tape<T>& tape, const NodePtr<T>& x);

template <class T>
NodePtr<T> scale_channels(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& gates);

template <class T>
NodePtr<T> softmax_channels(Tape<T>& tape, const NodePtr<T>& x);

}  // namespace ag
}  // namespace tofd
