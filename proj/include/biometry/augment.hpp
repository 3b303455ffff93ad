#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <utility>

#include "biometry/core.hpp"
#include "biometry/dod.hpp"
#include "biometry/errors.hpp"
#include "biometry/image.hpp"

namespace biometry {

struct AugmentConfig {
    double rotation_min_deg = -180.0;
    double rotation_max_deg = 180.0;
    double scale_min_pct = -5.0;
    double scale_max_pct = 5.0;
    int max_resample_attempts = 10;
    std::uint64_t seed = 0;
};

inline void validate(const AugmentConfig& c) {
    if (c.rotation_min_deg < -180.0 || c.rotation_max_deg > 180.0 ||
        c.rotation_min_deg > c.rotation_max_deg)
        throw DomainError("AugmentConfig: rotation range must lie within [-180, 180]");
    if (c.scale_min_pct > c.scale_max_pct || c.scale_min_pct < -50.0)
        throw DomainError("AugmentConfig: invalid scale range");
    if (c.max_resample_attempts < 1)
        throw DomainError("AugmentConfig: max_resample_attempts must be >= 1");
}

struct AugmentStats {
    std::size_t emitted = 0;
    std::size_t skipped = 0;
    std::size_t rejected_attempts = 0;
};

namespace detail {

/// Output pixel (xo, yo) samples the input at c + Minv (p - c); landmarks map
/// forward by p' = c + M (p - c). The crop back to the source H x W is
/// implicit: out-of-support samples read as zero.
inline ImageF warp_about_center(const ImageF& img, double m00, double m01, double m10,
                                double m11) {
    const double det = m00 * m11 - m01 * m10;
    if (std::abs(det) < 1e-12) throw DomainError("warp_about_center: singular transform");
    const double i00 = m11 / det, i01 = -m01 / det;
    const double i10 = -m10 / det, i11 = m00 / det;
    const double cx = (img.width() - 1) / 2.0;
    const double cy = (img.height() - 1) / 2.0;
    ImageF out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        const double ry = y - cy;
        for (int x = 0; x < img.width(); ++x) {
            const double rx = x - cx;
            const double sx = cx + i00 * rx + i01 * ry;
            const double sy = cy + i10 * rx + i11 * ry;
            out.at(x, y) = bilinear_sample(img, sx, sy);
        }
    }
    return out;
}

inline Point2D map_point_about_center(Point2D p, int w, int h, double m00, double m01,
                                      double m10, double m11) {
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    const double rx = p.x - cx, ry = p.y - cy;
    return {cx + m00 * rx + m01 * ry, cy + m10 * rx + m11 * ry};
}

inline bool in_frame(Point2D p, int w, int h) {
    return p.x >= 0.0 && p.x < static_cast<double>(w) && p.y >= 0.0 &&
           p.y < static_cast<double>(h);
}

inline std::optional<AnnotatedImage> transform_sample(const AnnotatedImage& sample, double m00,
                                                      double m01, double m10, double m11) {
    AnnotatedImage out = sample;
    const int w = sample.width(), h = sample.height();
    for (auto& pair : out.landmarks) {
        pair.first = map_point_about_center(pair.first, w, h, m00, m01, m10, m11);
        pair.second = map_point_about_center(pair.second, w, h, m00, m01, m10, m11);
        if (!in_frame(pair.first, w, h) || !in_frame(pair.second, w, h)) return std::nullopt;
    }
    out.pixels = warp_about_center(sample.pixels, m00, m01, m10, m11);
    return out;
}

} // namespace detail

/// Rotate image and landmarks about the continuous image center
/// ((W-1)/2, (H-1)/2), bilinear resampling, zero fill. Returns nullopt when a
/// landmark leaves the frame so the caller can resample the angle.
inline std::optional<AnnotatedImage> rotate(const AnnotatedImage& sample, double angle_deg) {
    if (angle_deg < -180.0 || angle_deg > 180.0)
        throw DomainError("rotate: angle outside [-180, 180]");
    if (angle_deg == 0.0) return sample;
    const double t = angle_deg * (M_PI / 180.0);
    const double c = std::cos(t), s = std::sin(t);
    return detail::transform_sample(sample, c, -s, s, c);
}

/// Uniform scaling about the image center; crop/pad back to H x W is implicit
/// in the fixed output frame.
inline std::optional<AnnotatedImage> scale_jitter(const AnnotatedImage& sample, double factor) {
    if (!(factor > 0.0)) throw DomainError("scale_jitter: factor must be positive");
    if (factor == 1.0) return sample;
    return detail::transform_sample(sample, factor, 0.0, 0.0, factor);
}

/// Rotation, then scale, then class reassignment. Parameters are resampled up
/// to max_resample_attempts when a landmark leaves the frame; nullopt means
/// the sample is skipped for this pass. model == nullptr disables
/// reassignment (the no-orientation baseline).
inline std::optional<AnnotatedImage> augment_sample(
    const AnnotatedImage& sample, const OrientationModel* model, const AugmentConfig& config,
    std::mt19937_64& rng, AugmentStats* stats = nullptr,
    ProjectionOrdering ordering = ProjectionOrdering::absolute_projection) {
    validate(config);
    std::uniform_real_distribution<double> angle_dist(config.rotation_min_deg,
                                                      config.rotation_max_deg);
    std::uniform_real_distribution<double> scale_dist(config.scale_min_pct, config.scale_max_pct);

    for (int attempt = 0; attempt < config.max_resample_attempts; ++attempt) {
        const double angle = angle_dist(rng);
        const double factor = 1.0 + scale_dist(rng) / 100.0;
        std::optional<AnnotatedImage> rotated = rotate(sample, angle);
        if (!rotated) {
            if (stats) ++stats->rejected_attempts;
            continue;
        }
        std::optional<AnnotatedImage> scaled = scale_jitter(*rotated, factor);
        if (!scaled) {
            if (stats) ++stats->rejected_attempts;
            continue;
        }
        if (model) {
            for (auto& pair : scaled->landmarks)
                pair = reassign(pair, *model, scaled->width(), scaled->height(), ordering);
        }
        if (stats) ++stats->emitted;
        return scaled;
    }
    if (stats) ++stats->skipped;
    return std::nullopt;
}

} // namespace biometry
