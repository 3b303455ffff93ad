#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biometry/errors.hpp"
#include "biometry/image.hpp"

namespace biometry {

// ---------------------------------------------------------------------------
// Domain types. Coordinate convention everywhere: x grows rightward, y grows
// downward, origin at the top-left pixel center. Landmark coordinates are
// continuous (sub-pixel capable).
// ---------------------------------------------------------------------------

struct Point2D {
    double x = 0.0;
    double y = 0.0;

    friend Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2D operator*(double s, Point2D p) { return {s * p.x, s * p.y}; }
    friend bool operator==(Point2D a, Point2D b) { return a.x == b.x && a.y == b.y; }
};

/// Point with coordinates divided by the image extent, so u,v in [0,1].
struct NormalizedPoint {
    double u = 0.0;
    double v = 0.0;
};

enum class MeasurementKind { OFD, BPD, FL };

inline std::string to_string(MeasurementKind kind) {
    switch (kind) {
    case MeasurementKind::OFD: return "OFD";
    case MeasurementKind::BPD: return "BPD";
    case MeasurementKind::FL: return "FL";
    }
    return "?";
}

inline MeasurementKind parse_measurement_kind(std::string_view s) {
    if (s == "OFD") return MeasurementKind::OFD;
    if (s == "BPD") return MeasurementKind::BPD;
    if (s == "FL") return MeasurementKind::FL;
    throw DomainError("unknown measurement kind: " + std::string(s));
}

/// Two labeled 2D points defining one biometric measurement.
struct LandmarkPair {
    Point2D first;
    Point2D second;
    MeasurementKind measurement = MeasurementKind::OFD;

    LandmarkPair swapped() const { return {second, first, measurement}; }
};

inline double euclidean_distance(Point2D a, Point2D b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

inline NormalizedPoint normalize(Point2D p, double width, double height) {
    if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height))
        throw DomainError("normalize: point outside image bounds");
    return {p.x / width, p.y / height};
}

inline Point2D denormalize(NormalizedPoint p, double width, double height) {
    return {p.u * width, p.v * height};
}

/// One grayscale image with landmark annotations and optional physical scale.
struct AnnotatedImage {
    ImageF pixels;
    std::vector<LandmarkPair> landmarks;
    std::optional<double> mm_per_pixel;
    std::string subject_id;
    std::string source_id;
    std::string case_id;
    std::string image_path;

    int width() const { return pixels.width(); }
    int height() const { return pixels.height(); }
};

inline void validate(const AnnotatedImage& img) {
    for (const auto& pair : img.landmarks) {
        for (Point2D p : {pair.first, pair.second}) {
            if (!(p.x >= 0.0 && p.x < img.width() && p.y >= 0.0 && p.y < img.height()))
                throw DomainError("landmark outside image bounds in case " + img.case_id);
        }
        if (pair.first == pair.second)
            throw DomainError("landmark pair with coincident points in case " + img.case_id);
    }
    if (img.mm_per_pixel && *img.mm_per_pixel <= 0.0)
        throw DomainError("non-positive mm_per_pixel in case " + img.case_id);
}

inline std::optional<LandmarkPair> find_pair(const AnnotatedImage& img, MeasurementKind kind) {
    for (const auto& pair : img.landmarks)
        if (pair.measurement == kind) return pair;
    return std::nullopt;
}

/// splitmix64 mix of a base seed and a stream index. Used to hand independent
/// deterministic RNG streams to epochs, workers and per-image generators.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace biometry
