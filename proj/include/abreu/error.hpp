#pragma once

#include <stdexcept>
#include <string>

namespace abreu {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public Error {
public:
  using Error::Error;
};

class StencilError : public Error {
public:
  using Error::Error;
};

/// log-barrier evaluated outside the positive-definite cone
class BarrierDomainError : public Error {
public:
  using Error::Error;
};

class NonConvergence : public Error {
public:
  NonConvergence(const std::string& what, double last_residual)
      : Error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

private:
  double last_residual_;
};

class LossOfConvexity : public Error {
public:
  using Error::Error;
};

class LinearSolveFailure : public Error {
public:
  using Error::Error;
};

class InfeasibleEpsilon : public Error {
public:
  InfeasibleEpsilon(const std::string& what, double eps) : Error(what), eps_(eps) {}
  double epsilon() const { return eps_; }

private:
  double eps_;
};

class SectionError : public Error {
public:
  enum class Kind { empty, not_compactly_contained, degenerate };
  SectionError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

class InsufficientDecadeCoverage : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace abreu
