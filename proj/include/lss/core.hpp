#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lss {

// Error taxonomy. The CLI maps InputError-family -> exit 1, everything
// else -> exit 2.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ParameterError : InputError {
    using InputError::InputError;
};
struct ShapeError : InputError {
    using InputError::InputError;
};
struct DegenerateInputError : InputError {
    using InputError::InputError;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Row-major grayscale intensity grid, every value in [0,1].
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    GrayImage() = default;
    GrayImage(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {
        if (h < 1 || w < 1) throw ShapeError("GrayImage: height and width must be >= 1");
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }

    // Edge-replicated read, the boundary rule for all filters.
    double at_clamped(int r, int c) const {
        r = std::clamp(r, 0, height - 1);
        c = std::clamp(c, 0, width - 1);
        return at(r, c);
    }

    size_t size() const { return data.size(); }

    bool same_shape(const GrayImage& o) const { return height == o.height && width == o.width; }
};

// Row-major boolean grid with the same shape as its source image.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int h, int w, bool fill = false)
        : height(h), width(w), bits(static_cast<size_t>(h) * w, fill ? 1 : 0) {
        if (h < 1 || w < 1) throw ShapeError("BinaryMask: height and width must be >= 1");
    }

    uint8_t& at(int r, int c) { return bits[static_cast<size_t>(r) * width + c]; }
    bool at(int r, int c) const { return bits[static_cast<size_t>(r) * width + c] != 0; }
    bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }

    size_t size() const { return bits.size(); }
    bool same_shape(const BinaryMask& o) const { return height == o.height && width == o.width; }
    bool same_shape(const GrayImage& o) const { return height == o.height && width == o.width; }

    size_t foreground_count() const {
        size_t n = 0;
        for (uint8_t b : bits) n += (b != 0);
        return n;
    }

    bool operator==(const BinaryMask& o) const {
        if (!same_shape(o)) return false;
        for (size_t i = 0; i < bits.size(); ++i)
            if ((bits[i] != 0) != (o.bits[i] != 0)) return false;
        return true;
    }
};

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw ShapeError("mask_union: shape mismatch");
    BinaryMask out(a.height, a.width);
    for (size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = (a.bits[i] || b.bits[i]) ? 1 : 0;
    return out;
}

inline BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw ShapeError("mask_intersect: shape mismatch");
    BinaryMask out(a.height, a.width);
    for (size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = (a.bits[i] && b.bits[i]) ? 1 : 0;
    return out;
}

// true iff every foreground pixel of a is foreground in b
inline bool mask_subset(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b)) throw ShapeError("mask_subset: shape mismatch");
    for (size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] && !b.bits[i]) return false;
    return true;
}

// Severity grades; BC merges the radiological B and C levels.
enum class Grade { A, BC, D };

inline const char* grade_name(Grade g) {
    switch (g) {
        case Grade::A: return "A";
        case Grade::BC: return "BC";
        case Grade::D: return "D";
    }
    return "?";
}

inline Grade grade_from_name(const std::string& s) {
    if (s == "A" || s == "a") return Grade::A;
    if (s == "BC" || s == "bc" || s == "B&C" || s == "b&c") return Grade::BC;
    if (s == "D" || s == "d") return Grade::D;
    throw InputError("unknown grade label: " + s);
}

}  // namespace lss
