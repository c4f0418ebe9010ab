#include "tofdetect/optim.hpp"

#include <algorithm>
#include <cmath>

namespace tofd {

template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               double lr) {
    if (params.size() != grads.size()) fail(ErrorKind::ShapeMismatch, "adam_step: params and grads differ in count");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->size(), 0.0);
            state.v[i].assign(params[i]->size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) fail(ErrorKind::ShapeMismatch, "adam_step: state tracks a different parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != grads[i]->shape() || state.m[i].size() != params[i]->size())
            fail(ErrorKind::ShapeMismatch, "adam_step: shape mismatch for parameter " + std::to_string(i));
    }

    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = *grads[i];
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] = static_cast<T>(p[j] - lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
        }
    }
}

template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>* const>, AdamState<float>&,
                        double);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>* const>, AdamState<double>&,
                        double);

GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets, double eps,
                           std::size_t max_elements_per_target, double scale_floor) {
    GradCheckResult result;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        Tensor<double>& x = *targets[t].value;
        const Tensor<double>& analytic = *targets[t].analytic;
        if (analytic.shape() != x.shape()) fail(ErrorKind::ShapeMismatch, "grad_check: analytic gradient shape differs");
        double floor = 1e-12;
        if (scale_floor > 0.0)
            for (double a : analytic.values()) floor = std::max(floor, scale_floor * std::abs(a));
        std::size_t stride = 1;
        if (max_elements_per_target > 0 && x.size() > max_elements_per_target)
            stride = (x.size() + max_elements_per_target - 1) / max_elements_per_target;
        for (std::size_t i = 0; i < x.size(); i += stride) {
            const double orig = x[i];
            const double h = eps * std::max(1.0, std::abs(orig));
            x[i] = orig + h;
            const double up = loss();
            x[i] = orig - h;
            const double down = loss();
            x[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i];
            const double err = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_target = t;
                result.worst_index = i;
            }
        }
    }
    return result;
}

}  // namespace tofd
