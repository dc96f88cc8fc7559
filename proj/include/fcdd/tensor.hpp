#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fcdd {

/// Shape of a dense 4-D raster: batch, channels, height, width.
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape&) const = default;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }

    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }
};

/// Dense row-major raster of 64-bit reals. The universal carrier for
/// images, feature maps, heatmaps and gradients.
class Raster {
public:
    Raster() = default;

    explicit Raster(Shape s, double fill = 0.0)
        : shape_(s), data_(check_count(s), fill) {}

    Raster(Shape s, std::vector<double> data) : shape_(s), data_(std::move(data)) {
        if (data_.size() != s.count())
            throw std::invalid_argument("Raster: data length " +
                                        std::to_string(data_.size()) +
                                        " does not match shape " + s.str());
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
    double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    double* row(int n, int c, int y) { return data_.data() + index(n, c, y, 0); }
    const double* row(int n, int c, int y) const { return data_.data() + index(n, c, y, 0); }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    /// View of one sample's entries (channels*h*w contiguous values).
    std::span<double> sample(int n) {
        std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w;
        return {data_.data() + per * n, per};
    }
    std::span<const double> sample(int n) const {
        std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w;
        return {data_.data() + per * n, per};
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static Raster random_uniform(Shape s, double lo, double hi, std::mt19937_64& rng) {
        Raster r(s);
        std::uniform_real_distribution<double> dist(lo, hi);
        for (double& v : r.data_) v = dist(rng);
        return r;
    }

private:
    static std::size_t check_count(Shape s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw std::invalid_argument("Raster: negative dimension in shape " + s.str());
        return s.count();
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_shape(const Raster& r, Shape expected, const char* what) {
    if (!(r.shape() == expected))
        throw std::invalid_argument(std::string(what) + ": expected shape " +
                                    expected.str() + ", got " + r.shape().str());
}

}  // namespace fcdd
