#pragma once

#include <stdexcept>
#include <string>

namespace vlp {

// Error taxonomy. Callers catch by category; messages name the operands.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-range ids, class labels, positions.
struct IndexError : Error {
  using Error::Error;
};

// Bad argument values: empty inputs, degenerate boxes, invalid config.
struct ValueError : Error {
  using Error::Error;
};

// Malformed files (records, manifests, vocabularies, checkpoints).
struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Evaluation-protocol violations (e.g. zero-shot on a fine-tuned checkpoint).
struct ProtocolError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace vlp
