#pragma once

#include <stdexcept>
#include <string>

namespace raymap {

// Bad user input: malformed config, out-of-range value, unknown name.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Lookup of an entity that does not exist (site id, param name).
class NotFoundError : public std::runtime_error {
 public:
  explicit NotFoundError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem trouble: missing file, unreadable stream, write failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation requested before its prerequisites exist (e.g. gated
// prediction without a fitted gate).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace raymap
