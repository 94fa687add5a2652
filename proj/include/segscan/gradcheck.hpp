#pragma once

#include <cmath>
#include <functional>

#include "segscan/errors.hpp"
#include "segscan/tensor.hpp"

namespace segscan {

// Central-difference gradient oracle. 64-bit path; h defaults to 1e-3.
// This is the independent reference every hand-derived adjoint is checked
// against, so it must stay free of any implementation shortcuts.
inline Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                       const Tensor<double>& x, double h = 1e-3) {
    Tensor<double> g(x.shape());
    Tensor<double> probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw OracleError("non-finite objective during finite differencing");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// max_i |a_i - b_i| / max(||b||_inf, floor). The floor gives structurally
// zero-gradient groups an absolute-tolerance fallback: central differences
// resolve such groups only down to rounding noise, which must not be
// amplified into a spurious relative error.
inline double relative_error(const Tensor<double>& analytic, const Tensor<double>& reference,
                             double floor = 1e-4) {
    double scale = floor;
    for (std::size_t i = 0; i < reference.numel(); ++i)
        scale = std::max(scale, std::abs(reference[i]));
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - reference[i]));
    return worst / scale;
}

}  // namespace segscan
