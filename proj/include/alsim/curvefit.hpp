#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace alsim {

/// Learning-curve model f(x) = (1 - a) - b * x^c. b may take either sign, so
/// both rising and falling curves are representable.
struct PowerLawParams {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

inline double predict(const PowerLawParams& params, double x) {
  if (x < 1.0) throw std::invalid_argument("predict: x must be >= 1");
  return (1.0 - params.a) - params.b * std::pow(x, params.c);
}

struct PowerLawFit {
  PowerLawParams params;
  double residual_rms = 0.0;
};

namespace detail {

inline double sse_for(const std::vector<std::pair<double, double>>& points,
                      const PowerLawParams& p) {
  double sse = 0.0;
  for (const auto& [x, y] : points) {
    const double r = y - ((1.0 - p.a) - p.b * std::pow(x, p.c));
    if (!std::isfinite(r)) return std::numeric_limits<double>::infinity();
    sse += r * r;
  }
  return sse;
}

/// Least squares for (a, b) with c held fixed: y = alpha - b*u, u = x^c.
inline PowerLawParams linear_init(const std::vector<std::pair<double, double>>& points,
                                  double c) {
  const double n = static_cast<double>(points.size());
  double su = 0.0, suu = 0.0, sy = 0.0, suy = 0.0;
  for (const auto& [x, y] : points) {
    const double u = std::pow(x, c);
    su += u;
    suu += u * u;
    sy += y;
    suy += u * y;
  }
  // [ n   -su ] [alpha]   [ sy ]
  // [ su  -suu] [  b  ] = [ suy]
  const double det = n * (-suu) - (-su) * su;
  PowerLawParams p{.a = 1.0 - sy / n, .b = 0.0, .c = c};
  if (std::abs(det) > 1e-30) {
    const double alpha = (sy * (-suu) - (-su) * suy) / det;
    const double b = (n * suy - sy * su) / det;
    p.a = 1.0 - alpha;
    p.b = b;
  }
  return p;
}

/// Solves the 3x3 system M*delta = rhs in place. Returns false if singular.
inline bool solve3(std::array<std::array<double, 3>, 3> m, std::array<double, 3> rhs,
                   std::array<double, 3>& delta) {
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int row = col + 1; row < 3; ++row) {
      if (std::abs(m[row][col]) > std::abs(m[pivot][col])) pivot = row;
    }
    if (std::abs(m[pivot][col]) < 1e-300) return false;
    std::swap(m[col], m[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    for (int row = col + 1; row < 3; ++row) {
      const double factor = m[row][col] / m[col][col];
      for (int k = col; k < 3; ++k) m[row][k] -= factor * m[col][k];
      rhs[row] -= factor * rhs[col];
    }
  }
  for (int row = 2; row >= 0; --row) {
    double sum = rhs[row];
    for (int k = row + 1; k < 3; ++k) sum -= m[row][k] * delta[k];
    delta[row] = sum / m[row][row];
  }
  return true;
}

/// Levenberg-Marquardt refinement of one start point.
inline std::pair<PowerLawParams, double> refine(
    const std::vector<std::pair<double, double>>& points, PowerLawParams p) {
  double lambda = 1e-3;
  double sse = sse_for(points, p);
  for (int iter = 0; iter < 500; ++iter) {
    // Accumulate J^T J and J^T r for residuals r_i = y_i - f(x_i);
    // dr/da = 1, dr/db = u, dr/dc = b*u*ln x.
    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{};
    for (const auto& [x, y] : points) {
      const double u = std::pow(x, p.c);
      const double lx = std::log(x);
      const double r = y - ((1.0 - p.a) - p.b * u);
      const std::array<double, 3> j = {1.0, u, p.b * u * lx};
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) jtj[row][col] += j[row] * j[col];
        jtr[row] += j[row] * r;
      }
    }

    bool moved = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      auto damped = jtj;
      for (int d = 0; d < 3; ++d) {
        damped[d][d] += lambda * std::max(jtj[d][d], 1e-12);
      }
      std::array<double, 3> delta{};
      if (!solve3(damped, jtr, delta)) {
        lambda *= 3.0;
        continue;
      }
      // Newton step for r = y - f solves (J^T J) d = J^T r with p -= d.
      PowerLawParams candidate{p.a - delta[0], p.b - delta[1], p.c - delta[2]};
      candidate.c = std::clamp(candidate.c, -20.0, 20.0);
      const double candidate_sse = sse_for(points, candidate);
      if (candidate_sse <= sse) {
        const double step = std::sqrt(delta[0] * delta[0] + delta[1] * delta[1] +
                                      delta[2] * delta[2]);
        p = candidate;
        sse = candidate_sse;
        lambda = std::max(lambda / 3.0, 1e-12);
        moved = true;
        if (step < 1e-9) return {p, sse};
        break;
      }
      lambda *= 3.0;
    }
    if (!moved) break;
  }
  return {p, sse};
}

}  // namespace detail

/// Fits f(x) = (1 - a) - b*x^c by damped Gauss-Newton from a grid of starts
/// over c, with (a, b) seeded by a linear solve at each fixed c. Keeps the
/// best local minimum found.
inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 4) {
    throw std::invalid_argument("fit_power_law: need at least 4 points");
  }
  bool any_distinct = false;
  for (const auto& [x, y] : points) {
    if (x < 1.0) throw std::invalid_argument("fit_power_law: x values must be >= 1");
    if (x != points.front().first) any_distinct = true;
  }
  if (!any_distinct) {
    throw std::invalid_argument("fit_power_law: degenerate points (all x equal)");
  }

  PowerLawParams best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (double c0 : {0.1, 0.25, 0.5, 0.75, 1.0}) {
    const PowerLawParams start = detail::linear_init(points, c0);
    const auto [candidate, sse] = detail::refine(points, start);
    if (sse < best_sse) {
      best_sse = sse;
      best = candidate;
    }
  }
  PowerLawFit fit;
  fit.params = best;
  fit.residual_rms = std::sqrt(best_sse / static_cast<double>(points.size()));
  return fit;
}

/// Inverts f(x) = target in closed form. Returns nullopt when the target is
/// on the wrong side of the curve's reachable range.
inline std::optional<double> labels_for_target(const PowerLawParams& params,
                                               double target) {
  if (params.c == 0.0) throw std::invalid_argument("labels_for_target: c must be nonzero");
  if (params.b == 0.0) return std::nullopt;  // constant curve, no unique solution
  const double ratio = ((1.0 - params.a) - target) / params.b;
  if (ratio <= 0.0) return std::nullopt;
  return std::pow(ratio, 1.0 / params.c);
}

}  // namespace alsim
