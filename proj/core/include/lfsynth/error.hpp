#pragma once

#include <stdexcept>
#include <string>

namespace lfsynth {

// Caller supplied something invalid: bad shapes, files, configs or domains.
// The CLI maps these to exit status 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public UserError {
 public:
  using UserError::UserError;
};

class LoadError : public UserError {
 public:
  using UserError::UserError;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class DomainError : public UserError {
 public:
  using UserError::UserError;
};

// An internal invariant broke (non-finite values, misuse of the tape).
// The CLI maps these to exit status 2.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace lfsynth
