#pragma once

#include <span>
#include <utility>
#include <vector>

namespace ntklab {

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double stderr_slope = 0.0;
    int points = 0;
};

/// Ordinary least squares of log y on log x. Requires >= 3 strictly positive
/// points; stderr_slope is the standard error of the fitted slope.
SlopeFit fit_loglog_slope(std::span<const std::pair<double, double>> points);

SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points);

} // namespace ntklab
