#include "m2r2/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "m2r2/numerics/adam.hpp"

namespace m2r2 {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const ScalarBuilder& f) {
    Graph g;
    const Var out = f(g);
    if (!out.value().is_scalar()) throw std::invalid_argument("grad_check: function must return a scalar");
    return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarBuilder& f, std::span<Parameter* const> params, double step,
                           double tolerance, double floor) {
    if (step <= 0) throw std::invalid_argument("grad_check: step must be positive");
    const double first = evaluate(f);
    const double second = evaluate(f);
    if (first != second && !(std::isnan(first) && std::isnan(second)))
        throw std::runtime_error("grad_check: function is not deterministic (" + std::to_string(first) + " vs " +
                                 std::to_string(second) + ")");

    zero_grads(params);
    {
        Graph g;
        const Var out = f(g);
        g.backward(out);
    }

    GradCheckReport report;
    report.tolerance = tolerance;
    for (auto* p : params) {
        GradCheckEntry entry;
        entry.parameter = p->name;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + step;
            const double up = evaluate(f);
            p->value[i] = saved - step;
            const double down = evaluate(f);
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = relative_error(p->grad[i], numeric, floor);
            if (i == 0 || err > entry.max_rel_error) {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = p->grad[i];
                entry.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    zero_grads(params);
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace m2r2
