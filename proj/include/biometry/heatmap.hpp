#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <utility>

#include "biometry/core.hpp"
#include "biometry/errors.hpp"
#include "biometry/image.hpp"

namespace biometry {

struct HeatmapConfig {
    double sigma = 2.0;           // Gaussian std, heatmap pixels
    int stride = 4;               // input pixels per heatmap pixel
    double truncation_radius = 6; // heatmap pixels; target is 0 beyond this
};

inline void validate(const HeatmapConfig& c) {
    if (!(c.sigma > 0.0)) throw DomainError("HeatmapConfig: sigma must be > 0");
    if (c.stride < 1) throw DomainError("HeatmapConfig: stride must be >= 1");
    if (c.truncation_radius < 3.0 * c.sigma)
        throw DomainError("HeatmapConfig: truncation_radius must be >= 3 sigma");
}

/// Two per-landmark response maps at a fixed output stride. Heatmap cell
/// (row i, col j) corresponds to input coordinates (stride*(j+0.5),
/// stride*(i+0.5)).
struct HeatmapStack {
    int stride = 4;
    std::array<Image<double>, 2> maps;

    int height() const { return maps[0].height(); }
    int width() const { return maps[0].width(); }
};

/// Gaussian target maps, peak 1 (unnormalized), evaluated at cell centers in
/// heatmap coordinates and truncated to exactly 0 beyond truncation_radius.
inline HeatmapStack encode(const LandmarkPair& pair, int height, int width,
                           const HeatmapConfig& config = {}) {
    validate(config);
    if (height < config.stride || width < config.stride)
        throw DomainError("encode: image smaller than one stride cell");
    const std::array<Point2D, 2> pts = {pair.first, pair.second};
    for (const auto& p : pts) {
        if (p.x < 0.0 || p.x >= static_cast<double>(width) || p.y < 0.0 ||
            p.y >= static_cast<double>(height))
            throw DomainError("encode: landmark out of bounds");
    }
    const int hh = height / config.stride;
    const int hw = width / config.stride;
    HeatmapStack stack;
    stack.stride = config.stride;
    const double inv2s2 = 1.0 / (2.0 * config.sigma * config.sigma);
    const double r2 = config.truncation_radius * config.truncation_radius;
    for (int k = 0; k < 2; ++k) {
        Image<double> map(hw, hh, 0.0);
        const double gx = pts[k].x / config.stride - 0.5;
        const double gy = pts[k].y / config.stride - 0.5;
        for (int i = 0; i < hh; ++i) {
            const double dy = i - gy;
            for (int j = 0; j < hw; ++j) {
                const double dx = j - gx;
                const double d2 = dx * dx + dy * dy;
                if (d2 <= r2) map.at(j, i) = std::exp(-d2 * inv2s2);
            }
        }
        stack.maps[k] = std::move(map);
    }
    return stack;
}

struct DecodeResult {
    std::array<Point2D, 2> points;      // input-image pixel coordinates
    std::array<double, 2> peak_values;  // heatmap value at the argmax cell
    std::array<bool, 2> flat_channel;   // channel was constant; coordinate is the tie-break
    bool low_confidence = false;        // any flat channel

    LandmarkPair as_pair(MeasurementKind kind) const {
        return {points[0], points[1], kind};
    }
};

/// Integer argmax per channel mapped to the cell's input-space center; ties
/// take the smallest row-major index. subpixel enables a one-step quadratic
/// refinement per axis (off by default: the decode rule is the maximal pixel).
inline DecodeResult decode(const HeatmapStack& stack, bool subpixel = false) {
    if (stack.stride < 1) throw DomainError("decode: invalid stride");
    DecodeResult out;
    for (int k = 0; k < 2; ++k) {
        const auto& map = stack.maps[k];
        if (map.width() < 1 || map.height() < 1) throw DomainError("decode: empty channel");
        int bi = 0, bj = 0;
        double best = map.at(0, 0);
        double worst = best;
        for (int i = 0; i < map.height(); ++i) {
            for (int j = 0; j < map.width(); ++j) {
                const double v = map.at(j, i);
                if (!std::isfinite(v)) throw DomainError("decode: non-finite heatmap value");
                if (v > best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
                if (v < worst) worst = v;
            }
        }
        double x = bj, y = bi; // heatmap coordinates
        if (subpixel) {
            auto refine = [&](double vm, double v0, double vp) {
                const double denom = vm - 2.0 * v0 + vp;
                if (denom >= 0.0) return 0.0; // not a strict local max fit
                double off = 0.5 * (vm - vp) / denom;
                return std::clamp(off, -0.5, 0.5);
            };
            if (bj > 0 && bj + 1 < map.width())
                x += refine(map.at(bj - 1, bi), map.at(bj, bi), map.at(bj + 1, bi));
            if (bi > 0 && bi + 1 < map.height())
                y += refine(map.at(bj, bi - 1), map.at(bj, bi), map.at(bj, bi + 1));
        }
        out.points[k] = {stack.stride * (x + 0.5), stack.stride * (y + 0.5)};
        out.peak_values[k] = best;
        out.flat_channel[k] = (best == worst);
    }
    out.low_confidence = out.flat_channel[0] || out.flat_channel[1];
    return out;
}

/// Mean over all channels and cells of the squared difference.
inline double mse_loss(const HeatmapStack& predicted, const HeatmapStack& target) {
    double sum = 0.0;
    std::size_t count = 0;
    for (int k = 0; k < 2; ++k) {
        const auto& p = predicted.maps[k];
        const auto& t = target.maps[k];
        if (p.width() != t.width() || p.height() != t.height())
            throw DomainError("mse_loss: shape mismatch");
        for (int i = 0; i < p.height(); ++i)
            for (int j = 0; j < p.width(); ++j) {
                const double d = p.at(j, i) - t.at(j, i);
                sum += d * d;
            }
        count += static_cast<std::size_t>(p.width()) * p.height();
    }
    if (count == 0) throw DomainError("mse_loss: empty stacks");
    return sum / static_cast<double>(count);
}

/// d(mse)/d(predicted): 2 (p - t) / N with N = total cell count across both
/// channels.
inline HeatmapStack mse_loss_gradient(const HeatmapStack& predicted, const HeatmapStack& target) {
    HeatmapStack grad;
    grad.stride = predicted.stride;
    std::size_t count = 0;
    for (int k = 0; k < 2; ++k) {
        const auto& p = predicted.maps[k];
        const auto& t = target.maps[k];
        if (p.width() != t.width() || p.height() != t.height())
            throw DomainError("mse_loss_gradient: shape mismatch");
        count += static_cast<std::size_t>(p.width()) * p.height();
    }
    if (count == 0) throw DomainError("mse_loss_gradient: empty stacks");
    const double scale = 2.0 / static_cast<double>(count);
    for (int k = 0; k < 2; ++k) {
        const auto& p = predicted.maps[k];
        const auto& t = target.maps[k];
        Image<double> g(p.width(), p.height(), 0.0);
        for (int i = 0; i < p.height(); ++i)
            for (int j = 0; j < p.width(); ++j)
                g.at(j, i) = scale * (p.at(j, i) - t.at(j, i));
        grad.maps[k] = std::move(g);
    }
    return grad;
}

} // namespace biometry
