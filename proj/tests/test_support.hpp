#pragma once

#include <cmath>
#include <functional>

#include "ocn/rng.hpp"
#include "ocn/tensor.hpp"

namespace ocn::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// Central finite difference of a scalar-valued function w.r.t. one entry of
/// a master tensor. The function must rebuild its computation from scratch so
/// that the perturbation is visible.
inline double central_diff(const std::function<double()>& f, Tensor& param, int64_t idx, double h = 1e-5) {
    const double saved = param[idx];
    param[idx] = saved + h;
    const double fp = f();
    param[idx] = saved - h;
    const double fm = f();
    param[idx] = saved;
    return (fp - fm) / (2.0 * h);
}

/// Relative error with a small absolute floor so that near-zero gradients do
/// not produce spurious 0/0 blowups.
inline double rel_err(double a, double b, double floor_ = 1e-8) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace ocn::test
