#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace biometry {

/// Dense 2D grid, row-major. x is the column (grows rightward), y the row
/// (grows downward); origin at the top-left pixel center.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
        assert(width >= 0 && height >= 0);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    bool in_bounds(int x, int y) const {
        return x >= 0 && x < width_ && y >= 0 && y < height_;
    }

    T& at(int x, int y) {
        assert(in_bounds(x, y));
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }
    const T& at(int x, int y) const {
        assert(in_bounds(x, y));
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }

    std::vector<T>& pixels() { return data_; }
    const std::vector<T>& pixels() const { return data_; }

    bool operator==(const Image& other) const {
        return width_ == other.width_ && height_ == other.height_ && data_ == other.data_;
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

using ImageF = Image<float>;
using ImageU8 = Image<std::uint8_t>;

/// Axis-aligned integer rectangle (x,y = top-left corner).
struct Rect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
};

/// Bilinear sample with zero fill outside the image support.
inline double bilinear_sample(const ImageF& img, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    auto px = [&](int xi, int yi) -> double {
        return img.in_bounds(xi, yi) ? static_cast<double>(img.at(xi, yi)) : 0.0;
    };
    return (1.0 - fy) * ((1.0 - fx) * px(x0, y0) + fx * px(x0 + 1, y0)) +
           fy * ((1.0 - fx) * px(x0, y0 + 1) + fx * px(x0 + 1, y0 + 1));
}

/// Bilinear resize with the half-pixel center convention. Output pixel
/// (xo, yo) samples the input at ((xo+0.5)*w/nw - 0.5, (yo+0.5)*h/nh - 0.5).
inline ImageF bilinear_resize(const ImageF& img, int new_width, int new_height) {
    assert(new_width > 0 && new_height > 0 && !img.empty());
    if (new_width == img.width() && new_height == img.height()) return img;
    ImageF out(new_width, new_height);
    const double sx = static_cast<double>(img.width()) / new_width;
    const double sy = static_cast<double>(img.height()) / new_height;
    for (int y = 0; y < new_height; ++y) {
        const double src_y = (y + 0.5) * sy - 0.5;
        for (int x = 0; x < new_width; ++x) {
            const double src_x = (x + 0.5) * sx - 0.5;
            // clamp to the edge so shrinking never reads the zero fill
            const double cx = std::clamp(src_x, 0.0, static_cast<double>(img.width() - 1));
            const double cy = std::clamp(src_y, 0.0, static_cast<double>(img.height() - 1));
            out.at(x, y) = static_cast<float>(bilinear_sample(img, cx, cy));
        }
    }
    return out;
}

inline ImageF to_float(const ImageU8& img) {
    ImageF out(img.width(), img.height());
    std::transform(img.pixels().begin(), img.pixels().end(), out.pixels().begin(),
                   [](std::uint8_t v) { return static_cast<float>(v); });
    return out;
}

inline ImageU8 to_u8_clamped(const ImageF& img) {
    ImageU8 out(img.width(), img.height());
    std::transform(img.pixels().begin(), img.pixels().end(), out.pixels().begin(),
                   [](float v) {
                       return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
                   });
    return out;
}

} // namespace biometry
