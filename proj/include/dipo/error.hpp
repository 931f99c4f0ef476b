#pragma once

#include <stdexcept>
#include <string>

namespace dipo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or record content supplied by the caller.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Too few samples or zero spread where a distribution must be fitted.
class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

/// A task without exactly one matching probe response.
class JoinError : public Error {
 public:
  JoinError(std::string example_id, const std::string& what)
      : Error(what), example_id_(std::move(example_id)) {}
  const std::string& example_id() const noexcept { return example_id_; }

 private:
  std::string example_id_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// A record that falls outside every difficulty bucket.
class AssignmentError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or wire content.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace dipo
