#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace metoken {

// Error taxonomy. Each class maps to a fixed process exit code (see cli).
class Error : public std::runtime_error {
 public:
  Error(std::string name, std::string msg, int exit_code)
      : std::runtime_error(name + ": " + msg),
        name_(std::move(name)),
        exit_code_(exit_code) {}
  const std::string& name() const { return name_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string name_;
  int exit_code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("ConfigError", m, 1) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error("ParseError", m, 2) {}
};
struct DatasetError : Error {
  explicit DatasetError(const std::string& m) : Error("DatasetError", m, 3) {}
};
struct GeometryError : Error {
  explicit GeometryError(const std::string& m) : Error("GeometryError", m, 4) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("ShapeError", m, 5) {}
};
struct TrainError : Error {
  explicit TrainError(const std::string& m) : Error("TrainError", m, 6) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& m) : Error("CheckpointError", m, 7) {}
};
struct SplitError : Error {
  explicit SplitError(const std::string& m) : Error("SplitError", m, 8) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& m) : Error("IndexError", m, 9) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& m) : Error("NumericalError", m, 9) {}
};

// FNV-1a, used for feature checksums and config hashes.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

// String literals must hash by content, not fall into the (ptr, len) overload.
inline uint64_t fnv1a(const char* s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(std::string(s), h);
}

}  // namespace metoken
