#pragma once

#include "slowfast/model.hpp"

namespace slowfast {

namespace detail {
inline Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }
inline Vector scalar_vector(double v) { return Vector::Constant(1, v); }
} // namespace detail

/// Scalar linear benchmark: A = -1, B = -2, f = y, g = 0, sigma1 = 0,
/// sigma2 = 1, no jumps, x0 = 1, y0 = 0.
[[nodiscard]] inline SlowFastModel linear_benchmark(double epsilon = 1e-3) {
  using detail::scalar_matrix;
  using detail::scalar_vector;
  SlowFastModel m;
  m.name = "linear";
  m.A = scalar_matrix(-1.0);
  m.B = scalar_matrix(-2.0);
  m.f = DriftFn::linear(scalar_matrix(0.0), scalar_matrix(1.0), scalar_vector(0.0));
  m.g = DriftFn::zero(1);
  m.f.constants = {1.0, 1.0};
  m.g.constants = {0.0, 1.0};
  m.slow.sigma = scalar_matrix(0.0);
  m.fast.sigma = scalar_matrix(1.0);
  m.epsilon = epsilon;
  m.x0 = scalar_vector(1.0);
  m.y0 = scalar_vector(0.0);
  return m;
}

/// Scalar saturating benchmark: A = -1, B = -2, f = tanh(y),
/// g = 0.25 tanh(x), sigma1 = 0, sigma2 = 1, no jumps.
[[nodiscard]] inline SlowFastModel tanh_benchmark(double epsilon = 0.05) {
  using detail::scalar_matrix;
  using detail::scalar_vector;
  SlowFastModel m;
  m.name = "tanh";
  m.A = scalar_matrix(-1.0);
  m.B = scalar_matrix(-2.0);
  m.f = DriftFn::tanh(scalar_vector(1.0), scalar_matrix(0.0), scalar_matrix(1.0),
                      scalar_vector(0.0));
  m.g = DriftFn::tanh(scalar_vector(0.25), scalar_matrix(1.0), scalar_matrix(0.0),
                      scalar_vector(0.0));
  m.f.constants = {1.0, 1.0};
  m.g.constants = {0.25, 1.0};
  m.slow.sigma = scalar_matrix(0.0);
  m.fast.sigma = scalar_matrix(1.0);
  m.epsilon = epsilon;
  m.x0 = scalar_vector(1.0);
  m.y0 = scalar_vector(0.0);
  return m;
}

/// Linear benchmark with the fast forcing replaced by g = 1.
[[nodiscard]] inline SlowFastModel constant_forcing_benchmark(double epsilon = 1e-3) {
  SlowFastModel m = linear_benchmark(epsilon);
  m.name = "constant_forcing";
  m.g = DriftFn::constant(detail::scalar_vector(1.0));
  m.g.constants = {0.0, std::nullopt};
  return m;
}

} // namespace slowfast
