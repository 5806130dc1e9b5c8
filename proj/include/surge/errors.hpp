#pragma once

#include <stdexcept>
#include <string>

namespace surge {

// Shape/extent mismatches inside tensor and layer code.
class dimension_error : public std::runtime_error {
public:
  explicit dimension_error(const std::string& what) : std::runtime_error(what) {}
};

// Bad user-facing configuration: CLI flags, config files, layer hyperparameters,
// incompatible checkpoints. Maps to exit code 2.
class config_error : public std::runtime_error {
public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid or inconsistent data: misaligned series, empty partitions, malformed
// containers, non-finite inputs. Maps to exit code 3.
class data_error : public std::runtime_error {
public:
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

// Violated API contract (e.g. backward on a non-scalar loss).
class contract_error : public std::logic_error {
public:
  explicit contract_error(const std::string& what) : std::logic_error(what) {}
};

// Filesystem failures.
class io_error : public std::runtime_error {
public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed remote payloads.
class parse_error : public std::runtime_error {
public:
  explicit parse_error(const std::string& what) : std::runtime_error(what) {}
};

// Network failures that survived the retry policy.
class transport_error : public std::runtime_error {
public:
  explicit transport_error(const std::string& what) : std::runtime_error(what) {}
};

// Metric undefined for the given inputs (constant series and the like).
class metric_error : public std::runtime_error {
public:
  explicit metric_error(const std::string& what) : std::runtime_error(what) {}
};

// Training loss went non-finite. Maps to exit code 4 when fatal.
class divergence_error : public std::runtime_error {
public:
  divergence_error(const std::string& what, int epoch)
      : std::runtime_error(what), epoch(epoch) {}
  int epoch;
};

}  // namespace surge
