#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bindattn/common.hpp"

namespace bindattn {

// Dense row-major float64 matrix. Plain value type; no ownership tricks.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), 0.0) {}

    double& at(int r, int c) { return data[size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[size_t(r) * cols + c]; }
    double* row(int r) { return data.data() + size_t(r) * cols; }
    const double* row(int r) const { return data.data() + size_t(r) * cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Counter-based splittable PRNG. Draw i of a stream is splitmix64's output for
// state key + i*golden; the key is derived from (seed, label[, index]) via FNV-1a,
// so any consumer can be added or reordered without shifting sibling streams and
// the exact sequences are reproducible from the documented construction alone.
class RngStream {
  public:
    static constexpr const char* kAlgorithm = "splitmix64 keyed by fnv1a64(seed,label,index)";

    explicit RngStream(uint64_t seed) : key_(mix(seed ^ 0x5bd1e995u)) {}

    RngStream derive(std::string_view label) const {
        return RngStream(Key{mix(key_ ^ fnv1a64(label))});
    }

    RngStream derive(std::string_view label, uint64_t index) const {
        return RngStream(Key{mix(mix(key_ ^ fnv1a64(label)) + mix(index))});
    }

    uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + next_double() * (hi - lo); }

    // Box-Muller; two uniforms per draw, no cached spare (keeps streams positionless).
    double normal() {
        double u1 = 1.0 - next_double();  // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    std::vector<double> uniforms(size_t n, double lo, double hi) {
        std::vector<double> out(n);
        for (auto& v : out) v = uniform(lo, hi);
        return out;
    }

    std::vector<double> normals(size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = normal();
        return out;
    }

  private:
    struct Key {
        uint64_t v;
    };
    explicit RngStream(Key k) : key_(k.v) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_ = 0;
};

// Softmax over the allowed subset of one score row. Disallowed entries never enter
// any reduction (numerically identical to a -inf additive bias, but bit-exact by
// construction: masked-out values cannot perturb anything). Output is 0 where
// disallowed; allowed entries sum to 1. Max subtraction keeps exp in range.
inline std::vector<double> masked_softmax_row(std::span<const double> scores,
                                              std::span<const uint8_t> allow) {
    if (scores.size() != allow.size())
        throw ShapeError("masked_softmax_row: scores/allow length mismatch (" +
                         std::to_string(scores.size()) + " vs " + std::to_string(allow.size()) +
                         ")");
    double m = -INFINITY;
    bool any = false;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (allow[i]) {
            any = true;
            if (scores[i] > m) m = scores[i];
        }
    }
    if (!any) throw EmptyAttentionRow("masked_softmax_row: no allowed keys in row");
    std::vector<double> out(scores.size(), 0.0);
    double sum = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {  // ascending index order, fixed
        if (allow[i]) {
            out[i] = std::exp(scores[i] - m);
            sum += out[i];
        }
    }
    for (size_t i = 0; i < scores.size(); ++i)
        if (allow[i]) out[i] /= sum;
    return out;
}

// y = x*w + b with the inner sum always taken in ascending index order, so results
// are identical however callers parallelize over rows.
inline Mat affine(const Mat& x, const Mat& w, std::span<const double> b) {
    if (x.cols != w.rows)
        throw ShapeError("affine: x is " + std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                         " but w is " + std::to_string(w.rows) + "x" + std::to_string(w.cols));
    if (!b.empty() && int(b.size()) != w.cols)
        throw ShapeError("affine: bias length " + std::to_string(b.size()) + " != " +
                         std::to_string(w.cols));
    Mat y(x.rows, w.cols);
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double* yr = y.row(r);
        for (int j = 0; j < x.cols; ++j) {
            const double xv = xr[j];
            const double* wr = w.row(j);
            for (int c = 0; c < w.cols; ++c) yr[c] += xv * wr[c];
        }
    }
    if (!b.empty())
        for (int r = 0; r < y.rows; ++r)
            for (int c = 0; c < y.cols; ++c) y.at(r, c) += b[c];
    return y;
}

}  // namespace bindattn
