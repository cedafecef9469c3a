#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bindattn {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// input problems (ParseError, ValidationError, UnknownInstance) -> 2,
// numerical problems (NumericalDivergence) -> 3.
enum class ErrorKind {
    Parse,
    Validation,
    Shape,
    EmptyAttentionRow,
    EmptyInstanceRegion,
    UnknownInstance,
    NumericalDivergence,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

struct ParseError : Error {
    // `where` is a document path like "instances[2].region.bbox".
    ParseError(const std::string& where, const std::string& msg)
        : Error(ErrorKind::Parse, where + ": " + msg) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(ErrorKind::Validation, msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(ErrorKind::Shape, msg) {}
};

struct EmptyAttentionRow : Error {
    explicit EmptyAttentionRow(const std::string& msg)
        : Error(ErrorKind::EmptyAttentionRow, msg) {}
};

struct EmptyInstanceRegion : Error {
    explicit EmptyInstanceRegion(const std::string& msg)
        : Error(ErrorKind::EmptyInstanceRegion, msg) {}
};

struct UnknownInstance : Error {
    explicit UnknownInstance(const std::string& msg) : Error(ErrorKind::UnknownInstance, msg) {}
};

struct NumericalDivergence : Error {
    explicit NumericalDivergence(const std::string& msg)
        : Error(ErrorKind::NumericalDivergence, msg) {}
};

// Half-open token index range [begin, end).
struct IndexRange {
    int begin = 0;
    int end = 0;

    int size() const { return end - begin; }
    bool empty() const { return end <= begin; }
    bool contains(int i) const { return i >= begin && i < end; }
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace bindattn
