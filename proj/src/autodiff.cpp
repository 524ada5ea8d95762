#include "enercast/autodiff.hpp"

namespace enercast::ad {

double digamma_value(double x) {
    // Recurrence up to x >= 10, then the standard asymptotic expansion.
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 -
                      inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)));
    return result;
}

double check_gradients(const ExprBuilder& f, std::span<const double> point, double h) {
    const std::size_t n = point.size();

    Tape tape;
    const std::vector<DiffScalar> xs = tape.leaves(point);
    const DiffScalar root = f(tape, xs);
    const std::vector<double> adj = tape.backward(root);

    auto eval_at = [&](std::span<const double> p) {
        Tape t;
        const std::vector<DiffScalar> vars = t.leaves(p);
        return f(t, vars).value();
    };

    std::vector<double> shifted(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double orig = shifted[i];
        shifted[i] = orig + h;
        const double fp = eval_at(shifted);
        shifted[i] = orig - h;
        const double fm = eval_at(shifted);
        shifted[i] = orig;
        const double cd = (fp - fm) / (2.0 * h);
        const double analytic = adj[static_cast<std::size_t>(xs[i].id())];
        const double rel = std::abs(analytic - cd) / (std::abs(cd) + 1e-12);
        if (rel > worst) worst = rel;
    }
    return worst;
}

}  // namespace enercast::ad
