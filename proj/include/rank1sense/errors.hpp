#pragma once

#include <stdexcept>
#include <string>

namespace rank1sense {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Input matrix fails the numerical full-column-rank test.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

class NotOrthonormal : public Error {
 public:
  using Error::Error;
};

class NotUnit : public Error {
 public:
  using Error::Error;
};

class NotOrthogonal : public Error {
 public:
  using Error::Error;
};

/// The block Gram matrix of the proof diagnostics is numerically singular.
class SingularBlockMatrix : public Error {
 public:
  using Error::Error;
};

class IllConditioned : public Error {
 public:
  using Error::Error;
};

/// Sketched matrix lost rank; raised only after the retry budget is spent.
class SketchRankDeficient : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class InsufficientSamples : public Error {
 public:
  using Error::Error;
};

/// An iterate collapsed to numerical rank < k before re-orthonormalization.
class RankCollapse : public Error {
 public:
  using Error::Error;
};

}  // namespace rank1sense
