#ifndef DYNMIX_COMMON_HPP
#define DYNMIX_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynmix {

/// Placeholder stored at unobserved entries. Downstream code must never read
/// it; every access is mask-guarded.
inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }

/// Dense row-major matrix of doubles.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return a.size(); }
};

/// Binary mask with the same layout as Mat.
struct MaskMat {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> a;

    MaskMat() = default;
    MaskMat(int r, int c, uint8_t fill = 0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    uint8_t& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    uint8_t at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    size_t count() const {
        size_t n = 0;
        for (uint8_t m : a) n += (m != 0);
        return n;
    }
};

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct NonFiniteError : Error {
    explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
    ParseError(size_t line, const std::string& msg)
        : Error("line " + std::to_string(line) + ": " + msg), line_no(line) {}
    size_t line_no;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidArgument(msg);
}

}  // namespace dynmix

#endif
