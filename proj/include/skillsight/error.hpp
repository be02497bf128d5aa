#pragma once

#include <stdexcept>
#include <string>

namespace skillsight {

// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file on disk does not follow the recording / checkpoint schema.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value or unknown key. `path` is a JSON-pointer-like
// location ("/teacher/video/width") when one is known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string path = {})
      : Error(path.empty() ? what : path + ": " + what), message_(what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }
  const std::string& message() const { return message_; }

  // The same error located under `prefix`. A prefix starting with '/' makes
  // the result a pointer path ("/power" + "gamma_mw.eye" -> "/power/gamma_mw/eye").
  ConfigError within(const std::string& prefix) const {
    if (prefix.empty()) return *this;
    std::string tail = path_;
    const bool pointer = prefix.front() == '/';
    if (pointer) {
      for (char& c : tail) {
        if (c == '.') c = '/';
      }
    }
    const char sep = pointer ? '/' : '.';
    if (tail.empty()) return ConfigError(message_, prefix);
    if (tail.front() == sep || tail.front() == '/') return ConfigError(message_, prefix + tail);
    return ConfigError(message_, prefix + sep + tail);
  }

 private:
  std::string message_;
  std::string path_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// The first gaze sample is invalid; the caller has to re-anchor the sequence
// at `first_valid` before normalizing.
class AnchorError : public Error {
 public:
  AnchorError(const std::string& what, long first_valid)
      : Error(what), first_valid_(first_valid) {}
  long first_valid() const { return first_valid_; }

 private:
  long first_valid_;
};

class UnsupportedModalityError : public Error {
 public:
  using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace skillsight
