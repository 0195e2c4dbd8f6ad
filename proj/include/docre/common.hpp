#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace docre {

// Base class for all recoverable errors raised by the library. The CLI
// catches this at the top level and turns it into a nonzero exit status.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input data (corpus files, label files, prediction files).
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& msg) : Error(msg) {}
};

// Invalid run configuration or incompatible component settings.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem / serialization failures.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Training aborted (non-finite loss).
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& msg) : Error(msg) {}
};

// FNV-1a over bytes; used for config fingerprints and sub-seed derivation.
inline uint64_t fnv1a64(const std::string& data) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// All randomness in a run is derived from one root seed. Each consumer gets
// its own stream keyed by a short tag ("init", "shuffle", "dropout", ...),
// so adding a consumer never perturbs the streams of the others.
inline uint64_t sub_seed(uint64_t root, const std::string& tag) {
  return splitmix64(root ^ fnv1a64(tag));
}

}  // namespace docre
