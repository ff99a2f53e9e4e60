#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ser/tensor.hpp"

namespace ser {

// Central finite differences in f64 at eps=1e-4, relative error
// |fd - analytic| / max(1, |fd|, |analytic|) maximized over elements.
double max_rel_error_vs_fd(TensorT<double>& x, const TensorT<double>& analytic,
                           const std::function<double()>& eval, double eps = 1e-4);

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 1e-4;
    bool pass = false;
};

// Conv, batchnorm, linear, maxpool, softmax/cross-entropy, area attention for
// all 9 key/value mode pairs, and an end-to-end model spot check.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 0x5e0a7);

bool gradient_suite_passed(const std::vector<GradCheckResult>& results);

}  // namespace ser
