#pragma once

#include <stdexcept>
#include <string>

namespace cdsynth {

// Bad or missing configuration (unknown key, unparsable value, missing
// required key, checkpoint/arch mismatch surfaced at command level).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem and serialization failures, including corrupt datasets.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A change-event draw found no eligible instance or admissible placement.
// Retryable: dataset generation catches it and draws a replacement mask.
class EventSimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cdsynth
