#ifndef CALMAXSPRT_NELDER_MEAD_HPP
#define CALMAXSPRT_NELDER_MEAD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>

namespace calmaxsprt {

template <std::size_t N>
struct SimplexResult {
  std::array<double, N> argmin{};
  double minimum = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Nelder-Mead minimization with standard coefficients (1, 2, 0.5, 0.5). Stops when the spread
/// of objective values across the simplex falls below `f_tolerance`.
template <std::size_t N, typename Fn>
SimplexResult<N> nelder_mead(Fn&& f, const std::array<double, N>& start,
                             const std::array<double, N>& step, double f_tolerance,
                             int max_iterations) {
  using Point = std::array<double, N>;
  std::array<Point, N + 1> simplex;
  std::array<double, N + 1> values;
  simplex[0] = start;
  for (std::size_t i = 0; i < N; ++i) {
    simplex[i + 1] = start;
    simplex[i + 1][i] += step[i];
  }
  for (std::size_t i = 0; i <= N; ++i) values[i] = f(simplex[i]);

  std::array<std::size_t, N + 1> order;
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::array<Point, N + 1> s2;
    std::array<double, N + 1> v2;
    for (std::size_t i = 0; i <= N; ++i) {
      s2[i] = simplex[order[i]];
      v2[i] = values[order[i]];
    }
    simplex = s2;
    values = v2;
  };
  auto blend = [](const Point& a, const Point& b, double t) {
    Point r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + t * (b[i] - a[i]);
    return r;
  };

  SimplexResult<N> result;
  int iter = 0;
  for (; iter < max_iterations; ++iter) {
    sort_simplex();
    if (std::fabs(values[N] - values[0]) < f_tolerance) {
      result.converged = true;
      break;
    }
    Point centroid{};
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t d = 0; d < N; ++d) centroid[d] += simplex[i][d] / static_cast<double>(N);

    const Point reflected = blend(centroid, simplex[N], -1.0);
    const double fr = f(reflected);
    if (fr < values[0]) {
      const Point expanded = blend(centroid, simplex[N], -2.0);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[N] = expanded;
        values[N] = fe;
      } else {
        simplex[N] = reflected;
        values[N] = fr;
      }
      continue;
    }
    if (fr < values[N - 1]) {
      simplex[N] = reflected;
      values[N] = fr;
      continue;
    }
    const bool outside = fr < values[N];
    const Point contracted = outside ? blend(centroid, reflected, 0.5) : blend(centroid, simplex[N], 0.5);
    const double fc = f(contracted);
    if (fc < (outside ? fr : values[N])) {
      simplex[N] = contracted;
      values[N] = fc;
      continue;
    }
    for (std::size_t i = 1; i <= N; ++i) {
      simplex[i] = blend(simplex[0], simplex[i], 0.5);
      values[i] = f(simplex[i]);
    }
  }
  sort_simplex();
  result.argmin = simplex[0];
  result.minimum = values[0];
  result.iterations = iter;
  return result;
}

}  // namespace calmaxsprt

#endif
