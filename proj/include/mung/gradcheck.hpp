#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mung/tensor.hpp"

namespace mung {

struct GradCheckCoord {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t n_coords = 0;
    bool pass = false;
    GradCheckCoord worst;
};

// Central finite differences against the reverse-mode gradient.
//
// `forward` rebuilds the scalar loss from the current values of `inputs`
// (define-by-run: it must read the tensors' data fresh on every call).
// Each input coordinate is perturbed by +-h in turn. Relative error per
// coordinate is |a - n| / max(|a|, |n|), falling back to the absolute error
// when both magnitudes are below 1e-8 (zero-gradient coordinates).
GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           double h, double tol);

}  // namespace mung
