#include "ntklab/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace ntklab {

SlopeFit fit_loglog_slope(std::span<const std::pair<double, double>> points) {
    if (points.size() < 3) {
        throw std::invalid_argument("log-log fit needs at least 3 points");
    }
    const auto m = static_cast<double>(points.size());

    double sx = 0.0, sy = 0.0;
    for (const auto& [x, y] : points) {
        if (!(x > 0.0) || !(y > 0.0)) {
            throw std::domain_error("log-log fit requires strictly positive values");
        }
        sx += std::log(x);
        sy += std::log(y);
    }
    const double mx = sx / m, my = sy / m;

    double sxx = 0.0, sxy = 0.0;
    for (const auto& [x, y] : points) {
        const double dx = std::log(x) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(y) - my);
    }
    if (sxx == 0.0) {
        throw std::domain_error("log-log fit: all x identical");
    }

    SlopeFit fit;
    fit.points = static_cast<int>(points.size());
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;

    double ssr = 0.0;
    for (const auto& [x, y] : points) {
        const double resid = std::log(y) - (fit.intercept + fit.slope * std::log(x));
        ssr += resid * resid;
    }
    fit.stderr_slope = std::sqrt(ssr / (m - 2.0) / sxx);
    return fit;
}

SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
    return fit_loglog_slope(std::span<const std::pair<double, double>>(points));
}

} // namespace ntklab
