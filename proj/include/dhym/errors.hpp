#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dhym {

// Base for all domain errors; the CLI maps subclasses onto its exit-code
// contract (see tools/).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Evaluation requested outside the calibrated strip |theta - theta_hat| < pi/2.
// Carries the offending margin (pi/2 - |theta - theta_hat|, <= 0 here).
class OutOfCalibratedRange : public DomainError {
 public:
  explicit OutOfCalibratedRange(double margin)
      : DomainError("outside calibrated strip, margin = " + std::to_string(margin)),
        margin_(margin) {}
  double margin() const noexcept { return margin_; }

 private:
  double margin_ = 0.0;
};

// theta sits at a pole of the outer tangent in T(lambda).
class TangentPole : public DomainError {
 public:
  TangentPole() : DomainError("theta lies at a tangent pole of T") {}
};

// A minor-identity evaluation hit the excluded case lambda_i = 0.
class ZeroEigenvalue : public DomainError {
 public:
  explicit ZeroEigenvalue(int index)
      : DomainError("zero eigenvalue at index " + std::to_string(index)), index_(index) {}
  int index() const noexcept { return index_; }

 private:
  int index_ = 0;
};

// theta_hat does not lie in the required branch ((n-1)pi/2, n pi/2).
class InvalidBranch : public DomainError {
 public:
  explicit InvalidBranch(const std::string& what) : DomainError(what) {}
};

// No 2*pi translate of arg Z lies in the requested branch.
class BranchUnavailable : public DomainError {
 public:
  explicit BranchUnavailable(double principal_arg, int branch)
      : DomainError("no branch-" + std::to_string(branch) + " lift of arg Z = " +
                    std::to_string(principal_arg)),
        principal_arg_(principal_arg),
        branch_(branch) {}
  double principal_arg() const noexcept { return principal_arg_; }
  int branch() const noexcept { return branch_; }

 private:
  double principal_arg_ = 0.0;
  int branch_ = 0;
};

// |Z| fell below the guard threshold.
class ZeroInvariant : public DomainError {
 public:
  ZeroInvariant() : DomainError("Z invariant is numerically zero") {}
};

class InvalidParameter : public DomainError {
 public:
  explicit InvalidParameter(const std::string& what) : DomainError(what) {}
};

// Initial data is not almost calibrated; lists the offending grid points.
class NotAlmostCalibrated : public DomainError {
 public:
  explicit NotAlmostCalibrated(std::vector<std::size_t> points)
      : DomainError("initial data leaves the calibrated strip at " +
                    std::to_string(points.size()) + " grid point(s)"),
        points_(std::move(points)) {}
  const std::vector<std::size_t>& points() const noexcept { return points_; }

 private:
  std::vector<std::size_t> points_;
};

// A flow state (or RK stage) left the calibrated strip. The continuum flow
// cannot do this, so it signals a discretization failure rather than a bug.
class LeftCalibratedRange : public DomainError {
 public:
  LeftCalibratedRange(std::size_t point, double margin)
      : DomainError("flow left the calibrated strip at grid point " + std::to_string(point) +
                    " (margin " + std::to_string(margin) + "); try halving dt"),
        point_(point),
        margin_(margin) {}
  std::size_t point() const noexcept { return point_; }
  double margin() const noexcept { return margin_; }

 private:
  std::size_t point_ = 0;
  double margin_ = 0.0;
};

}  // namespace dhym
