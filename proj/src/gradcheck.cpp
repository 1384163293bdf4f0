#include "mung/gradcheck.hpp"

#include <cmath>

namespace mung {

GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           double h, double tol) {
    if (h <= 0.0) throw ValueError("grad_check: h must be > 0");
    GradCheckReport report;

    for (auto& [name, t] : inputs) t.zero_grad();
    Tensor loss = forward();
    if (loss.numel() != 1) throw ShapeError("grad_check: forward() must be scalar-valued");
    backward(loss);

    for (auto& [name, t] : inputs) {
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) analytic = t.grad();
        std::vector<double> values = t.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + h;
            t.set_data(values);
            const double fp = forward().item();
            values[i] = orig - h;
            t.set_data(values);
            const double fm = forward().item();
            values[i] = orig;
            t.set_data(values);
            const double numeric = (fp - fm) / (2.0 * h);

            const double denom = std::max(std::abs(analytic[i]), std::abs(numeric));
            const double rel = denom > 1e-8 ? std::abs(analytic[i] - numeric) / denom
                                            : std::abs(analytic[i] - numeric);
            ++report.n_coords;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {name, i, analytic[i], numeric, rel};
            }
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace mung
