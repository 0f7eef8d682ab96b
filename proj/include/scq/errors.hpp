#pragma once

#include <stdexcept>
#include <string>

namespace scq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape mismatch, unknown node id, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Cholesky met a non-positive pivot.
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// The active-set QP solver exceeded its change budget.
class SolverStall : public Error {
 public:
  using Error::Error;
};

/// The reduced KKT system on the current active set is singular.
class DegenerateActiveSet : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Config / checkpoint content does not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

#define SCQ_EXPECT(cond, msg)                                   \
  do {                                                          \
    if (!(cond)) throw ::scq::ContractViolation(std::string(msg)); \
  } while (0)

}  // namespace scq
