#pragma once

#include <stdexcept>
#include <string>

namespace dcem {

// Caller broke a precondition on shapes or congruent structures.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Argument outside the operation's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// NaN/Inf showed up in a computation that must stay finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or malformed audio, manifests, checkpoints.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dcem
