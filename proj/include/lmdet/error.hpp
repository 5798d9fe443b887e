#pragma once

#include <cstdlib>
#include <iostream>
#include <stdexcept>
#include <string>

namespace lmdet {

// Machine-readable failure classes; the CLI maps these to exit codes and a
// one-line "error:<class>: message" report.
enum class ErrorClass {
  usage,    // bad command line
  config,   // bad or mismatched run configuration
  format,   // malformed file contents (annotations, params, images)
  io,       // filesystem failures
  shape,    // tensor / parameter shape violations
  data,     // dataset-level problems (empty, inconsistent N, ...)
  numeric,  // non-finite values where finiteness is required
};

inline const char* error_class_name(ErrorClass c) {
  switch (c) {
    case ErrorClass::usage: return "usage";
    case ErrorClass::config: return "config";
    case ErrorClass::format: return "format";
    case ErrorClass::io: return "io";
    case ErrorClass::shape: return "shape";
    case ErrorClass::data: return "data";
    case ErrorClass::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& msg)
      : std::runtime_error(msg), cls_(cls) {}
  ErrorClass cls() const { return cls_; }

 private:
  ErrorClass cls_;
};

[[noreturn]] inline void fail(ErrorClass cls, const std::string& msg) {
  throw Error(cls, msg);
}

// Log verbosity comes from the environment only (LMDET_LOG=quiet|info|debug).
inline int log_level() {
  static const int level = [] {
    const char* v = std::getenv("LMDET_LOG");
    if (!v) return 1;
    const std::string s(v);
    if (s == "quiet") return 0;
    if (s == "debug") return 2;
    return 1;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[lmdet] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "[lmdet:debug] " << msg << "\n";
}

}  // namespace lmdet
