#include "tofdetect/graph.hpp"

#include <algorithm>

namespace tofd {

template <class T>
void Node<T>::accumulate(const Tensor<T>& g) {
    if (g.shape() != value.shape())
        fail(ErrorKind::ShapeMismatch,
             "gradient shape " + shape_string(g.shape()) + " does not match value " + shape_string(value.shape()));
    if (!has_grad) {
        grad = g;
        has_grad = true;
        return;
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

template <class T>
NodePtr<T> make_leaf(Tensor<T> value, bool requires_grad) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return node;
}

template <class T>
NodePtr<T> Tape<T>::record(Tensor<T> value, bool requires_grad, std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad && record_grad_;
    if (node->requires_grad) {
        node->backward_fn = std::move(backward_fn);
        nodes_.push_back(node);
    }
    return node;
}

template <class T>
void Tape<T>::backward(const NodePtr<T>& output, const Tensor<T>& seed_grad) {
    output->accumulate(seed_grad);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>& n = **it;
        if (n.has_grad && n.backward_fn) n.backward_fn(n);
        // Intermediate gradients are dead once propagated.
        if (n.backward_fn) n.zero_grad();
    }
}

namespace ag {

namespace {

template <class T>
bool any_grad(std::initializer_list<const NodePtr<T>*> nodes) {
    return std::any_of(nodes.begin(), nodes.end(), [](const NodePtr<T>* n) { return *n && (*n)->requires_grad; });
}

template <class T>
std::span<const T> span_of(const NodePtr<T>& n) {
    return n ? n->value.values() : std::span<const T>();
}

template <class T>
Tensor<T> as_column(std::vector<T> v) {
    const int c = static_cast<int>(v.size());
    return Tensor<T>({c, 1, 1, 1, 1}, std::move(v));
}

}  // namespace

template <class T>
NodePtr<T> conv3d(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& weights, const NodePtr<T>& bias, int stride) {
    Tensor<T> out = conv3d_forward(x->value, weights->value, span_of(bias), stride);
    return tape.record(std::move(out), any_grad<T>({&x, &weights, &bias}), [x, weights, bias, stride](Node<T>& self) {
        ConvGrads<T> g = conv3d_backward(x->value, weights->value, self.grad, stride, static_cast<bool>(bias));
        if (x->requires_grad) x->accumulate(g.input);
        if (weights->requires_grad) weights->accumulate(g.weights);
        if (bias && bias->requires_grad) bias->accumulate(as_column(std::move(g.bias)));
    });
}

template <class T>
NodePtr<T> instance_norm(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& gamma, const NodePtr<T>& beta, T eps) {
    auto cache = std::make_shared<InstanceNormCache<T>>();
    Tensor<T> out = instance_norm_forward(x->value, span_of(gamma), span_of(beta), eps, cache.get());
    return tape.record(std::move(out), any_grad<T>({&x, &gamma, &beta}), [x, gamma, beta, cache](Node<T>& self) {
        InstanceNormGrads<T> g = instance_norm_backward(*cache, span_of(gamma), self.grad);
        if (x->requires_grad) x->accumulate(g.input);
        if (gamma->requires_grad) gamma->accumulate(as_column(std::move(g.gamma)));
        if (beta->requires_grad) beta->accumulate(as_column(std::move(g.beta)));
    });
}

template <class T>
NodePtr<T> leaky_relu(Tape<T>& tape, const NodePtr<T>& x, T slope) {
    return tape.record(leaky_relu_forward(x->value, slope), x->requires_grad, [x, slope](Node<T>& self) {
        x->accumulate(leaky_relu_backward(x->value, self.grad, slope));
    });
}

template <class T>
NodePtr<T> dropout(Tape<T>& tape, const NodePtr<T>& x, double p_drop, Rng& rng, bool training) {
    auto keep = std::make_shared<std::vector<T>>();
    Tensor<T> out = dropout_forward(x->value, p_drop, rng, training, keep.get());
    return tape.record(std::move(out), x->requires_grad, [x, keep](Node<T>& self) {
        Tensor<T> g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= (*keep)[i];
        x->accumulate(g);
    });
}

template <class T>
NodePtr<T> add(Tape<T>& tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    if (a->value.shape() != b->value.shape())
        fail(ErrorKind::ShapeMismatch,
             "add: " + shape_string(a->value.shape()) + " vs " + shape_string(b->value.shape()));
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return tape.record(std::move(out), any_grad<T>({&a, &b}), [a, b](Node<T>& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) b->accumulate(self.grad);
    });
}

template <class T>
NodePtr<T> concat(Tape<T>& tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    return tape.record(concat_channels(a->value, b->value), any_grad<T>({&a, &b}), [a, b](Node<T>& self) {
        const std::size_t sp = self.grad.spatial();
        const int ca = a->value.c(), cb = b->value.c();
        if (a->requires_grad) {
            Tensor<T> ga(a->value.shape());
            for (int n = 0; n < ga.n(); ++n)
                for (int c = 0; c < ca; ++c) std::copy_n(self.grad.plane(n, c), sp, ga.plane(n, c));
            a->accumulate(ga);
        }
        if (b->requires_grad) {
            Tensor<T> gb(b->value.shape());
            for (int n = 0; n < gb.n(); ++n)
                for (int c = 0; c < cb; ++c) std::copy_n(self.grad.plane(n, ca + c), sp, gb.plane(n, c));
            b->accumulate(gb);
        }
    });
}

template <class T>
NodePtr<T> upsample(Tape<T>& tape, const NodePtr<T>& x, int factor) {
    return tape.record(upsample_repeat_forward(x->value, factor), x->requires_grad, [x, factor](Node<T>& self) {
        x->accumulate(upsample_repeat_backward(self.grad, factor));
    });
}

template <class T>
NodePtr<T> global_max_pool(Tape<T>& tape, const NodePtr<T>& x) {
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    Tensor<T> out = global_max_pool_forward(x->value, argmax.get());
    return tape.record(std::move(out), x->requires_grad, [x, argmax](Node<T>& self) {
        x->accumulate(global_max_pool_backward(x->value.shape(), *argmax, self.grad));
    });
}

template <class T>
NodePtr<T> dense(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& weights, const NodePtr<T>& bias) {
    Tensor<T> out = dense_forward(x->value, weights->value, span_of(bias));
    return tape.record(std::move(out), any_grad<T>({&x, &weights, &bias}), [x, weights, bias](Node<T>& self) {
        DenseGrads<T> g = dense_backward(x->value, weights->value, self.grad);
        if (x->requires_grad) x->accumulate(g.input);
        if (weights->requires_grad) weights->accumulate(g.weights);
        if (bias && bias->requires_grad) bias->accumulate(as_column(std::move(g.bias)));
    });
}

template <class T>
NodePtr<T> sigmoid(Tape<T>& tape, const NodePtr<T>& x) {
    return tape.record(sigmoid_forward(x->value), x->requires_grad, [x](Node<T>& self) {
        x->accumulate(sigmoid_backward(self.value, self.grad));
    });
}

template <class T>
NodePtr<T> scale_channels(Tape<T>& tape, const NodePtr<T>& x, const NodePtr<T>& gates) {
    Tensor<T> out = scale_channels_forward(x->value, gates->value);
    return tape.record(std::move(out), any_grad<T>({&x, &gates}), [x, gates](Node<T>& self) {
        if (x->requires_grad) x->accumulate(scale_channels_forward(self.grad, gates->value));
        if (gates->requires_grad) {
            Tensor<T> gg(gates->value.shape());
            const std::size_t sp = x->value.spatial();
            for (int n = 0; n < gg.n(); ++n)
                for (int c = 0; c < gg.c(); ++c) {
                    const T* xv = x->value.plane(n, c);
                    const T* dy = self.grad.plane(n, c);
                    T acc = 0;
                    for (std::size_t i = 0; i < sp; ++i) acc += xv[i] * dy[i];
                    gg.at(n, c, 0, 0, 0) = acc;
                }
            gates->accumulate(gg);
        }
    });
}

template <class T>
NodePtr<T> softmax_channels(Tape<T>& tape, const NodePtr<T>& x) {
    return tape.record(softmax_channels_forward(x->value), x->requires_grad, [x](Node<T>& self) {
        x->accumulate(softmax_channels_backward(self.value, self.grad));
    });
}

}  // namespace ag

#define TOFD_INSTANTIATE_GRAPH(T)                                                                                  \
    template struct Node<T>;                                                                                       \
    template class Tape<T>;                                                                                        \
    template NodePtr<T> make_leaf(Tensor<T>, bool);                                                                \
    template NodePtr<T> ag::conv3d(Tape<T>&, const NodePtr<T>&, const NodePtr<T>&, const NodePtr<T>&, int);       \
    template NodePtr<T> ag::instance_norm(Tape<T>&, const NodePtr<T>&, const NodePtr<T>&, const NodePtr<T>&, T);  \
    template NodePtr<T> ag::leaky_relu(Tape<T>&, const NodePtr<T>&, T);                                           \
    template NodePtr<T> ag::dropout(Tape<T>&, const NodePtr<T>&, double, Rng&, bool);                             \
    template NodePtr<T> ag::add(Tape<T>&, const NodePtr<T>&, const NodePtr<T>&);                                  \
    template NodePtr<T> ag::concat(Tape<T>&, const NodePtr<T>&, const NodePtr<T>&);                               \
    template NodePtr<T> ag::upsample(Tape<T>&, const NodePtr<T>&, int);                                           \
    template NodePtr<T> ag::global_max_pool(Tape<T>&, const NodePtr<T>&);                                         \
    template NodePtr<T> ag::dense(Tape<T>&, const NodePtr<T>&, const NodePtr<T>&, const NodePtr<T>&);             \
    template NodePtr<T> ag::sigmoid(Tape<T>&, const NodePtr<T>&);                                                 \
    template NodePtr<T> ag::scale_channels(Tape<T>&, const NodePtr<T>&, const NodePtr<T>&);                       \
    template NodePtr<T> ag::softmax_channels(Tape<T>&, const NodePtr<T>&);

TOFD_INSTANTIATE_GRAPH(float)
TOFD_INSTANTIATE_GRAPH(double)

#undef TOFD_INSTANTIATE_GRAPH

}  // namespace tofd
