#include "duet/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace duet {

double grad_check(const std::function<double(const Vec&)>& f, const Vec& point,
                  const Vec& analytic, double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-4)) {
        throw ConfigError("grad_check: epsilon must lie in [1e-7, 1e-4]");
    }
    if (point.size() != analytic.size()) {
        throw ShapeError("grad_check: point and analytic gradient sizes differ");
    }
    double max_err = 0.0;
    Vec x = point;
    for (Index i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + epsilon;
        const double fp = f(x);
        x[i] = saved - epsilon;
        const double fm = f(x);
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("grad_check: non-finite function value at coordinate " +
                               std::to_string(i));
        }
        const double fd = (fp - fm) / (2.0 * epsilon);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace duet
