#pragma once

// Poincare-ball geometry with curvature -|c|. All formulas are written in the
// magnitude |c| > 0; the ball has radius 1/sqrt(|c|).

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "impress/error.hpp"
#include "impress/tensor.hpp"

namespace impress {

/// Points are kept at norm <= (1 - kBallGuard) * radius.
inline constexpr double kBallGuard = 1e-5;
/// Below this norm the exp/log maps take their removable-singularity branch.
inline constexpr double kZeroNorm = 1e-12;

class Curvature {
 public:
  explicit Curvature(double magnitude) : magnitude_(magnitude) {
    if (!(magnitude > 0.0) || !std::isfinite(magnitude)) {
      fail(ErrorKind::ParamError, "curvature magnitude must be positive and finite");
    }
    sqrt_ = std::sqrt(magnitude);
    radius_ = 1.0 / sqrt_;
  }

  double magnitude() const { return magnitude_; }
  double sqrt_magnitude() const { return sqrt_; }
  double radius() const { return radius_; }
  double max_norm() const { return (1.0 - kBallGuard) * radius_; }

  friend bool operator==(const Curvature& a, const Curvature& b) { return a.magnitude_ == b.magnitude_; }

 private:
  double magnitude_;
  double sqrt_;
  double radius_;
};

namespace detail {

inline double artanh_guarded(double x) {
  // The ball guard keeps x <= 1 - 1e-5 in exact arithmetic; rounding can push
  // it a hair over in float.
  return std::atanh(std::min(x, 1.0 - 1e-15));
}

}  // namespace detail

/// Rescales v onto the guard sphere when it reaches past it.
template <typename Scalar>
Vector<Scalar> clamp_to_ball(const Vector<Scalar>& v, const Curvature& c) {
  if (!v.allFinite()) fail(ErrorKind::NonFinite, "clamp_to_ball: non-finite coordinates");
  const double norm = static_cast<double>(v.norm());
  const double max_norm = c.max_norm();
  if (norm >= max_norm) return (v * static_cast<Scalar>(max_norm / norm)).eval();
  return v;
}

template <typename Scalar>
class BallPoint {
 public:
  /// Accepts any point strictly inside the open ball and clamps it into the
  /// guard region. Points on or beyond the boundary are rejected.
  BallPoint(Vector<Scalar> coords, Curvature curvature) : coords_(std::move(coords)), curvature_(curvature) {
    if (!coords_.allFinite()) fail(ErrorKind::NonFinite, "ball point with non-finite coordinates");
    if (static_cast<double>(coords_.norm()) >= curvature_.radius()) {
      fail(ErrorKind::BoundaryPoint, "point lies on or outside the ball boundary");
    }
    coords_ = clamp_to_ball(coords_, curvature_);
  }

  static BallPoint origin(Eigen::Index dim, Curvature curvature) {
    return BallPoint(Vector<Scalar>::Zero(dim), curvature);
  }

  const Vector<Scalar>& coords() const { return coords_; }
  const Curvature& curvature() const { return curvature_; }
  Eigen::Index dim() const { return coords_.size(); }

 private:
  BallPoint(Vector<Scalar> coords, Curvature curvature, bool) : coords_(std::move(coords)), curvature_(curvature) {}
  template <typename S>
  friend BallPoint<S> clamp_point(const Vector<S>&, const Curvature&);

  Vector<Scalar> coords_;
  Curvature curvature_;
};

/// clamp_to_ball lifted to a BallPoint; accepts points outside the ball.
template <typename Scalar>
BallPoint<Scalar> clamp_point(const Vector<Scalar>& v, const Curvature& c) {
  return BallPoint<Scalar>(clamp_to_ball(v, c), c, true);
}

template <typename Scalar>
struct TangentVector {
  Vector<Scalar> coords;
};

namespace detail {

template <typename Scalar>
void check_compatible(const BallPoint<Scalar>& x, const BallPoint<Scalar>& y) {
  if (!(x.curvature() == y.curvature())) fail(ErrorKind::GeometryMismatch, "points have different curvature");
  if (x.dim() != y.dim()) fail(ErrorKind::GeometryMismatch, "points have different dimension");
}

/// Raw Mobius addition without the clamp.
template <typename Scalar>
Vector<Scalar> mobius_add_raw(const Vector<Scalar>& x, const Vector<Scalar>& y, double kappa) {
  const double xy = static_cast<double>(x.dot(y));
  const double xx = static_cast<double>(x.squaredNorm());
  const double yy = static_cast<double>(y.squaredNorm());
  const double denom = 1.0 + 2.0 * kappa * xy + kappa * kappa * xx * yy;
  const double cx = (1.0 + 2.0 * kappa * xy + kappa * yy) / denom;
  const double cy = (1.0 - kappa * xx) / denom;
  return (static_cast<Scalar>(cx) * x + static_cast<Scalar>(cy) * y).eval();
}

inline double conformal_factor(double squared_norm, double kappa) { return 2.0 / (1.0 - kappa * squared_norm); }

}  // namespace detail

/// x (+) y = [(1 + 2k<x,y> + k|y|^2) x + (1 - k|x|^2) y] / (1 + 2k<x,y> + k^2 |x|^2 |y|^2)
template <typename Scalar>
BallPoint<Scalar> mobius_add(const BallPoint<Scalar>& x, const BallPoint<Scalar>& y) {
  detail::check_compatible(x, y);
  return clamp_point(detail::mobius_add_raw(x.coords(), y.coords(), x.curvature().magnitude()), x.curvature());
}

/// Exponential map at the origin: tanh(sqrt|c| |v|) v / (sqrt|c| |v|).
template <typename Scalar>
Vector<Scalar> expmap0(const Vector<Scalar>& v, const Curvature& c) {
  const double norm = static_cast<double>(v.norm());
  if (norm < kZeroNorm) return Vector<Scalar>::Zero(v.size());
  const double s = c.sqrt_magnitude();
  return clamp_to_ball((v * static_cast<Scalar>(std::tanh(s * norm) / (s * norm))).eval(), c);
}

/// Logarithmic map at the origin: artanh(sqrt|c| |u|) u / (sqrt|c| |u|).
template <typename Scalar>
Vector<Scalar> logmap0(const Vector<Scalar>& u, const Curvature& c) {
  const double norm = static_cast<double>(u.norm());
  if (norm >= c.radius()) fail(ErrorKind::BoundaryPoint, "logmap0 of a point outside the open ball");
  if (norm < kZeroNorm) return Vector<Scalar>::Zero(u.size());
  const double s = c.sqrt_magnitude();
  return (u * static_cast<Scalar>(detail::artanh_guarded(s * norm) / (s * norm))).eval();
}

template <typename Scalar>
BallPoint<Scalar> exp_map(const TangentVector<Scalar>& v, const BallPoint<Scalar>& base) {
  if (v.coords.size() != base.dim()) fail(ErrorKind::GeometryMismatch, "tangent vector dimension differs from base");
  if (!v.coords.allFinite()) fail(ErrorKind::NonFinite, "exp_map of a non-finite tangent vector");
  const Curvature& c = base.curvature();
  const double norm = static_cast<double>(v.coords.norm());
  if (norm < kZeroNorm) return base;
  const double s = c.sqrt_magnitude();
  const double lambda = detail::conformal_factor(static_cast<double>(base.coords().squaredNorm()), c.magnitude());
  const Vector<Scalar> step = v.coords * static_cast<Scalar>(std::tanh(s * lambda * norm / 2.0) / (s * norm));
  return clamp_point(detail::mobius_add_raw(base.coords(), clamp_to_ball(step, c), c.magnitude()), c);
}

template <typename Scalar>
TangentVector<Scalar> log_map(const BallPoint<Scalar>& u, const BallPoint<Scalar>& base) {
  detail::check_compatible(u, base);
  const Curvature& c = base.curvature();
  const Vector<Scalar> diff = detail::mobius_add_raw((-base.coords()).eval(), u.coords(), c.magnitude());
  const double norm = static_cast<double>(diff.norm());
  if (norm < kZeroNorm) return {Vector<Scalar>::Zero(u.dim())};
  const double s = c.sqrt_magnitude();
  const double lambda = detail::conformal_factor(static_cast<double>(base.coords().squaredNorm()), c.magnitude());
  const double coef = 2.0 * detail::artanh_guarded(s * norm) / (s * lambda * norm);
  return {(diff * static_cast<Scalar>(coef)).eval()};
}

/// Raw-vector log map; rejects points on or outside the boundary.
template <typename Scalar>
TangentVector<Scalar> log_map(const Vector<Scalar>& u, const BallPoint<Scalar>& base) {
  if (static_cast<double>(u.norm()) >= base.curvature().radius()) {
    fail(ErrorKind::BoundaryPoint, "log_map of a point on or outside the boundary");
  }
  return log_map(BallPoint<Scalar>(u, base.curvature()), base);
}

/// d(x, y) = (2 / sqrt|c|) artanh(sqrt|c| |(-x) (+) y|)
template <typename Scalar>
double hyperbolic_distance(const BallPoint<Scalar>& x, const BallPoint<Scalar>& y) {
  detail::check_compatible(x, y);
  const Curvature& c = x.curvature();
  const double norm =
      static_cast<double>(detail::mobius_add_raw((-x.coords()).eval(), y.coords(), c.magnitude()).norm());
  const double s = c.sqrt_magnitude();
  return 2.0 / s * detail::artanh_guarded(s * norm);
}

// ---------------------------------------------------------------------------
// Row-wise differentiable maps at the origin, used by the encoder.

namespace detail {

/// f(r) = tanh(s r) / (s r) and f'(r), with the r -> 0 limits.
inline std::pair<double, double> exp_ratio(double r, double s) {
  if (r < kZeroNorm) return {1.0, 0.0};
  const double u = s * r;
  const double t = std::tanh(u);
  const double f = t / u;
  const double sech2 = 1.0 - t * t;
  return {f, s * (sech2 * u - t) / (u * u)};
}

/// g(r) = artanh(s r) / (s r) and g'(r).
inline std::pair<double, double> log_ratio(double r, double s) {
  if (r < kZeroNorm) return {1.0, 0.0};
  const double u = std::min(s * r, 1.0 - 1e-15);
  const double a = std::atanh(u);
  const double g = a / u;
  return {g, s * (u / (1.0 - u * u) - a) / (u * u)};
}

/// y_i = ratio(|x_i|) x_i for each row; dy/dx = ratio I + ratio'/r x x^T.
template <typename Scalar, typename Ratio>
Tensor<Scalar> radial_rows(const Tensor<Scalar>& x, Ratio ratio, const char* op) {
  require_rank2(x.shape(), op);
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double r = static_cast<double>(x.value().row(i).norm());
    out.row(i) = x.value().row(i) * static_cast<Scalar>(ratio(r).first);
  }
  const bool record = recording<Scalar>({&x});
  std::function<void(Node<Scalar>&)> back;
  if (record) {
    back = [ratio](Node<Scalar>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      Matrix<Scalar> g(in.value.rows(), in.value.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const auto xi = in.value.row(i);
        const auto gi = self.grad.row(i);
        const double r = static_cast<double>(xi.norm());
        const auto [f, df] = ratio(r);
        g.row(i) = gi * static_cast<Scalar>(f);
        if (r >= kZeroNorm) g.row(i) += xi * static_cast<Scalar>(df / r * static_cast<double>(xi.dot(gi)));
      }
      in.accumulate(g);
    };
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x.node()}, std::move(back), record, op);
}

}  // namespace detail

/// Row-wise projection onto the guard sphere; rows inside pass through.
template <typename Scalar>
Tensor<Scalar> clamp_ball_rows(const Tensor<Scalar>& x, const Curvature& c) {
  const double max_norm = c.max_norm();
  return detail::radial_rows(
      x,
      [max_norm](double r) -> std::pair<double, double> {
        if (r < max_norm) return {1.0, 0.0};
        return {max_norm / r, -max_norm / (r * r)};
      },
      "clamp_ball_rows");
}

template <typename Scalar>
Tensor<Scalar> expmap0_rows(const Tensor<Scalar>& x, const Curvature& c) {
  const double s = c.sqrt_magnitude();
  return clamp_ball_rows(detail::radial_rows(x, [s](double r) { return detail::exp_ratio(r, s); }, "expmap0_rows"), c);
}

template <typename Scalar>
Tensor<Scalar> logmap0_rows(const Tensor<Scalar>& x, const Curvature& c) {
  const double radius = c.radius();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (static_cast<double>(x.value().row(i).norm()) >= radius) {
      fail(ErrorKind::BoundaryPoint, "logmap0_rows: row " + std::to_string(i) + " outside the ball");
    }
  }
  const double s = c.sqrt_magnitude();
  return detail::radial_rows(x, [s](double r) { return detail::log_ratio(r, s); }, "logmap0_rows");
}

}  // namespace impress
