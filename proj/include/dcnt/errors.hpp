#pragma once

#include <stdexcept>
#include <string>

namespace dcnt {

// Error taxonomy shared by all modules. Every error is a std::runtime_error so
// callers that do not care about the category can catch a single type.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition of a tensor op, layer or pipeline stage.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dcnt
