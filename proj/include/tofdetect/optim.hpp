#pragma once

#include <functional>
#include <span>
#include <vector>

#include "tofdetect/tensor.hpp"

namespace tofd {

template <class T>
struct AdamState {
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam update, in place. Moments are kept in double.
/// `params` and `grads` are parallel lists; the state sizes itself on first use.
template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
               double lr);

/// One tensor taking part in a gradient check: its live value (perturbed in
/// place) and the analytic gradient computed for it.
struct GradCheckTarget {
    Tensor<double>* value;
    const Tensor<double>* analytic;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_target = 0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Central finite differences against analytic gradients.
///
/// For every element, h = eps * max(1, |x|) and the numeric derivative is
/// (f(x + h) - f(x - h)) / 2h. The error of one element is
/// |analytic - numeric| / max(1e-12, |analytic| + |numeric|); the maximum is
/// returned. `max_elements_per_target` limits work on large tensors by
/// checking an evenly strided subset (0 = all).
///
/// With `scale_floor` > 0 the denominator is at least scale_floor times the
/// largest |analytic| entry of the same tensor, so entries many orders below
/// their tensor's scale are judged against round-off in f rather than against
/// their own near-zero size.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradCheckTarget> targets,
                           double eps = 1e-5, std::size_t max_elements_per_target = 0, double scale_floor = 0.0);

}  // namespace tofd
